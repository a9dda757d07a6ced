"""Scalar special functions used by the tilted-moment computations.

Everything here works on plain Python floats so that the per-site EP loop
does not pay numpy dispatch overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from scipy import integrate, special

__all__ = [
    "RossbergCoefficients",
    "log_norm_cdf",
    "norm_pdf",
    "zeta1",
    "zeta2",
    "lambert_w",
    "lambert_w_exp",
    "hermite",
    "rossberg_coefficients",
    "laplace_lognormal_asmussen",
    "log_laplace_lognormal_asmussen",
    "rossberg_g",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# below this the cdf is evaluated through the scaled complementary erf
_LOG_CDF_TAIL = -8.0

_W_TOL = 1e-14
_W_MAXITER = 50

_HERMITE_MAX_ORDER = 16
_ROSSBERG_MAX_ORDER = 10


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def log_norm_cdf(x: float) -> float:
    """Logarithm of the standard normal cdf, accurate deep into the left tail.

    For ``x < -8`` the identity ``Phi(x) = erfcx(-x/sqrt(2)) exp(-x^2/2) / 2``
    is used, which is the Mills-ratio form of the continued fraction and does
    not underflow.
    """
    if x < _LOG_CDF_TAIL:
        return math.log(0.5 * special.erfcx(-x / _SQRT2)) - 0.5 * x * x
    if x > 0.0:
        return math.log1p(-0.5 * math.erfc(x / _SQRT2))
    return math.log(0.5 * math.erfc(-x / _SQRT2))


def zeta1(x: float) -> float:
    """Inverse Mills ratio ``phi(x) / Phi(x)``.

    Written as ``exp(log phi - log Phi)``; for negative ``x`` both logs share
    the ``-x^2/2`` term, which cancels analytically to
    ``sqrt(2/pi) / erfcx(-x/sqrt(2))``.
    """
    if x < 0.0:
        return _SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)
    return math.exp(-0.5 * x * x - _LOG_SQRT_2PI - log_norm_cdf(x))


def zeta2(x: float) -> float:
    """Derivative of :func:`zeta1`, ``-zeta1(x)**2 - x*zeta1(x)``."""
    z = zeta1(x)
    return -z * (z + x)


def lambert_w(x: float) -> float:
    """Principal branch of the Lambert W function for ``x >= 0``.

    Halley iteration on ``w exp(w) - x``. The starting point is ``log1p(x)``
    below ``e`` and ``log(x) - log(log(x))`` above it.

    Raises
    ------
    ValueError
        If ``x`` is negative or not finite.
    """
    x = float(x)
    if not x >= 0.0 or math.isinf(x):
        raise ValueError(f"lambert_w needs a finite nonnegative argument, got {x!r}")
    if x == 0.0:
        return 0.0
    if x < math.e:
        w = math.log1p(x)
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    for _ in range(_W_MAXITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= _W_TOL * (1.0 + abs(w)):
            break
    return w


def lambert_w_exp(log_x: float) -> float:
    """``W(exp(log_x))`` without forming ``exp(log_x)``.

    Needed when the Laplace-transform argument overflows a double.
    """
    if log_x < 500.0:
        return lambert_w(math.exp(log_x))
    # W + log W = log_x, Newton from the asymptotic guess
    w = log_x - math.log(log_x)
    for _ in range(_W_MAXITER):
        step = (w + math.log(w) - log_x) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= _W_TOL * w:
            break
    return w


def hermite(m: int, x: float) -> float:
    """Physicists' Hermite polynomial ``H_m(x)`` by the three-term recurrence."""
    if m < 0 or m > _HERMITE_MAX_ORDER:
        raise ValueError(f"hermite order must be in [0, {_HERMITE_MAX_ORDER}], got {m}")
    h_prev, h = 1.0, 2.0 * x
    if m == 0:
        return h_prev
    for k in range(1, m):
        h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    return h


@dataclass(frozen=True)
class RossbergCoefficients:
    """Coefficients ``a_0..a_M`` of the cdf-convolution expansion."""

    a: tuple[float, ...]

    @property
    def order(self) -> int:
        return len(self.a) - 1

    def __getitem__(self, m: int) -> float:
        return self.a[m]


def _log_moment(m: int) -> float:
    # int_0^inf e^{-u} (ln u)^m du, split at 1 where the log changes sign;
    # the [0, 1] piece carries the integrable singularity
    def f(u):
        return math.exp(-u) * math.log(u) ** m

    total = 0.0
    for lo, hi in ((0.0, 1.0), (1.0, math.inf)):
        val, err = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=400)
        if not math.isfinite(val) or err > 1e-10 * max(1.0, abs(val)):
            raise RuntimeError(f"quadrature for a_{m} did not converge (err={err:.2e})")
        total += val
    return total


@lru_cache(maxsize=None)
def rossberg_coefficients(M: int) -> RossbergCoefficients:
    """``a_m = (-1)^m / m! * int_0^inf e^{-u} (ln u)^m du`` for ``m = 0..M``."""
    if M < 1 or M > _ROSSBERG_MAX_ORDER:
        raise ValueError(f"M must be in [1, {_ROSSBERG_MAX_ORDER}], got {M}")
    a = [1.0]
    for m in range(1, M + 1):
        a.append((-1) ** m / math.factorial(m) * _log_moment(m))
    return RossbergCoefficients(tuple(a))


def log_laplace_lognormal_asmussen(log_s: float, rho2: float) -> tuple[float, float]:
    """Log of the Laplace-method approximation of ``E[exp(-s e^X)]``, ``X ~ N(0, rho2)``.

    Takes ``log(s)`` so that callers with huge ``s`` never overflow.

    Returns
    -------
    log_l : float
        ``-W/rho2 - W^2/(2 rho2) - log(1 + W)/2`` with ``W = W(s rho2)``.
    w : float
        The Lambert W value, reused by the derivative formulas.
    """
    w = lambert_w_exp(log_s + math.log(rho2))
    log_l = -w / rho2 - 0.5 * w * w / rho2 - 0.5 * math.log1p(w)
    return log_l, w


def laplace_lognormal_asmussen(s: float, rho2: float) -> float:
    """Laplace-method approximation of the log-normal Laplace transform.

    Parameters
    ----------
    s : float
        Transform argument, ``s > 0``.
    rho2 : float
        Variance of the underlying Gaussian, ``rho2 > 0``.

    Returns
    -------
    float
        ``exp(-W/rho2 - W^2/(2 rho2)) / sqrt(1 + W)``, ``W = W(s rho2)``.
    """
    if not s > 0.0 or not rho2 > 0.0:
        raise ValueError("laplace_lognormal_asmussen needs s > 0 and rho2 > 0")
    return math.exp(log_laplace_lognormal_asmussen(math.log(s), rho2)[0])


def rossberg_g(x: float, rho: float, M: int = 6) -> tuple[float, float, float]:
    """Truncated expansion of ``G(x) = E[exp(-exp(rho (X0 - x)))]`` and its derivatives.

    ``G`` is the convolution of ``Phi`` with a log-exponential kernel; expanding
    ``Phi`` to order ``M`` and resumming the geometric tail gives::

        G(x) ~ Phi(x) - a_M/2 E(x) + exp(-x^2/2) sum_{m=1}^{M-1} c_m H_{m-1}(x/sqrt2)
        E(x) = exp(-x^2/2) erfcx((rho - x)/sqrt2)
        c_m  = (a_M - a_m) / (sqrt(pi) (rho sqrt2)^m)

    The expansion is asymptotic in ``rho``; it is poor for ``rho`` below one.

    Returns
    -------
    (g, g1, g2) : tuple of float
        ``G``, ``G'`` and ``G''`` at ``x``.
    """
    if not rho > 0.0:
        raise ValueError("rossberg_g needs rho > 0")
    if M < 2 or M > _ROSSBERG_MAX_ORDER:
        raise ValueError(f"M must be in [2, {_ROSSBERG_MAX_ORDER}], got {M}")
    a = rossberg_coefficients(M)
    a_M = a[M]
    gauss = math.exp(-0.5 * x * x)
    z = x / _SQRT2
    # tail = exp(rho^2/2 - x rho) erfc((rho - x)/sqrt2); the scaled erfc keeps
    # it finite when rho > x, the plain form when erfc's argument is negative
    u = (rho - x) / _SQRT2
    if u >= 0.0:
        tail = gauss * special.erfcx(u)
    else:
        tail = math.exp(rho * (0.5 * rho - x)) * math.erfc(u)

    s0 = s1 = s2 = 0.0
    h_prev, h = 1.0, 2.0 * z  # H_0, H_1
    h_list = [h_prev, h]
    for k in range(1, M + 1):
        h_prev, h = h, 2.0 * z * h - 2.0 * k * h_prev
        h_list.append(h)
    scale = rho * _SQRT2
    for m in range(1, M):
        c = (a_M - a[m]) / (_SQRT_PI * scale**m)
        s0 += c * h_list[m - 1]
        s1 -= c * h_list[m] / _SQRT2
        s2 += c * h_list[m + 1] / 2.0

    cdf = 0.5 * math.erfc(-z)
    g = cdf - 0.5 * a_M * tail + gauss * s0
    g1 = 0.5 * a_M * rho * tail + gauss * (
        1.0 / _SQRT_2PI - 0.5 * a_M * _SQRT_2_OVER_PI + s1
    )
    g2 = -0.5 * a_M * rho * rho * tail + gauss * (
        -x / _SQRT_2PI + 0.5 * a_M * (rho + x) * _SQRT_2_OVER_PI + s2
    )
    return g, g1, g2
