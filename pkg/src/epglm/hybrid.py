"""Tilted (hybrid) summaries for each supported likelihood.

Every site update only needs the one-dimensional projection of the cavity,
``eta ~ N(lam, rho2)``, and the likelihood ``l(eta)``. The functions below
return ``log Z``, ``Theta = d log Z / d lam`` and
``Delta = 2 d log Z / d rho2 - Theta^2``; tilted moments then follow from::

    E[eta]   = lam + rho2 * Theta
    var[eta] = rho2 + rho2^2 * Delta
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import special

from .special import (
    log_laplace_lognormal_asmussen,
    log_norm_cdf,
    rossberg_g,
    zeta1,
    zeta2,
)

__all__ = [
    "MODEL_KINDS",
    "ModelSpec",
    "CavityProjection",
    "TiltedSummary",
    "InvalidTiltedVariance",
    "QuadratureError",
    "tilted_probit",
    "tilted_logit",
    "tilted_poisson",
    "tilted_gamma",
    "tilted_quadrature",
    "tilted_to_site",
    "log_likelihood",
]

MODEL_KINDS = ("probit", "logit", "poisson", "gamma")

_PI_OVER_8 = math.pi / 8.0
_LOG_PI = math.log(math.pi)

DEFAULT_POISSON_THRESHOLD = 0.5
DEFAULT_ROSSBERG_ORDER = 6
# the cdf expansion is asymptotic in rho and diverges for small cavity variance
DEFAULT_ROSSBERG_MIN_RHO2 = 1.0
QUADRATURE_NODES = 201


class InvalidTiltedVariance(ArithmeticError):
    """The implied tilted variance ``rho2 (1 + rho2 Delta)`` is not positive."""


class QuadratureError(ArithmeticError):
    """The quadrature integrand was not finite at some node."""


class CavityProjection(NamedTuple):
    """Cavity distribution projected on ``x_i``: ``eta ~ N(lam, rho2)``."""

    lam: float
    rho2: float


class TiltedSummary(NamedTuple):
    log_z: float
    theta: float
    delta: float

    def mean(self, cav: CavityProjection) -> float:
        return cav.lam + cav.rho2 * self.theta

    def variance(self, cav: CavityProjection) -> float:
        return cav.rho2 + cav.rho2 * cav.rho2 * self.delta


def _check_binary(y) -> int:
    if y not in (0, 1):
        raise ValueError(f"binary response expected, got {y!r}")
    return int(y)


def tilted_probit(y: int, cav: CavityProjection) -> TiltedSummary:
    """Exact tilted summary for the probit likelihood ``Phi((2y-1) eta)``.

    The tilted distribution is extended skew-normal; with
    ``s = (2y-1)/sqrt(1+rho2)`` and ``tau = s*lam`` the normaliser is
    ``Phi(tau)`` and the derivatives are ``s*zeta1(tau)`` and ``s^2*zeta2(tau)``.
    """
    sign = 2 * _check_binary(y) - 1
    s = sign / math.sqrt(1.0 + cav.rho2)
    tau = s * cav.lam
    return TiltedSummary(log_norm_cdf(tau), s * zeta1(tau), s * s * zeta2(tau))


def _log_expit(t: float) -> float:
    if t >= 0.0:
        return -math.log1p(math.exp(-t))
    return t - math.log1p(math.exp(t))


def _expit(t: float) -> float:
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def tilted_logit(y: int, cav: CavityProjection, *, consistent: bool = True) -> TiltedSummary:
    """Probit-matched approximation of the logit tilted normaliser.

    ``Z ~ expit((2y-1) lam / sqrt(1 + rho2 pi/8))``.

    Parameters
    ----------
    consistent : bool
        If true (default) ``delta`` uses the exact ``rho2``-derivative of this
        approximate ``log Z``, ``-(pi/16) lam c^2 theta`` with
        ``c = (1 + rho2 pi/8)^(-1/2)``. If false it uses the commonly quoted
        form with a single factor ``c``, which is off by ``1/c`` and fails a
        finite-difference check; kept only to measure that discrepancy.
    """
    sign = 2 * _check_binary(y) - 1
    c = 1.0 / math.sqrt(1.0 + cav.rho2 * _PI_OVER_8)
    t = sign * cav.lam * c
    theta = sign * c * _expit(-t)
    # d/d rho2 of c is -(pi/16) c^3, hence the c^2 factor relative to theta
    d_rho2 = -0.5 * _PI_OVER_8 * cav.lam * (c * c if consistent else c) * theta
    return TiltedSummary(_log_expit(t), theta, 2.0 * d_rho2 - theta * theta)


def _check_count(y) -> int:
    yi = int(y)
    if yi != y or yi < 0:
        raise ValueError(f"nonnegative integer response expected, got {y!r}")
    return yi


def _poisson_asmussen(y: int, cav: CavityProjection) -> TiltedSummary:
    lam, rho2 = cav
    log_l, w = log_laplace_lognormal_asmussen(lam + rho2 * y, rho2)
    log_z = -math.lgamma(y + 1.0) + y * lam + 0.5 * rho2 * y * y + log_l
    # with u = y - W/rho2 and g = W/(2(1+W)^2) the rho2-derivative collapses
    # to u^2/2 - (1 + rho2 y) g / rho2, avoiding the y^2/2 cancellation
    u = y - w / rho2
    g = 0.5 * w / (1.0 + w) ** 2
    theta = u - g
    d_rho2 = 0.5 * u * u - (1.0 + rho2 * y) * g / rho2
    return TiltedSummary(log_z, theta, 2.0 * d_rho2 - theta * theta)


def _poisson_rossberg(y: int, cav: CavityProjection, order: int) -> Optional[TiltedSummary]:
    lam, rho2 = cav
    rho = math.sqrt(rho2)
    g, g1, g2 = rossberg_g(-lam / rho - y * rho, rho, order)
    if not g > 0.0:
        return None
    r1 = g1 / g / rho
    r2 = g2 / g / rho2
    log_z = -math.lgamma(y + 1.0) + y * lam + 0.5 * rho2 * y * y + math.log(g)
    theta = y - r1
    # second-derivative form of Delta: Z''/Z - (Z'/Z)^2
    delta = y * y - 2.0 * y * r1 + r2 - theta * theta
    return TiltedSummary(log_z, theta, delta)


def poisson_uses_rossberg(
    y: int,
    cav: CavityProjection,
    threshold: float = DEFAULT_POISSON_THRESHOLD,
    min_rho2: float = DEFAULT_ROSSBERG_MIN_RHO2,
) -> bool:
    """Branch rule: the cdf expansion handles ``y = 0`` sites with small ``lam``."""
    return y == 0 and cav.lam < threshold and cav.rho2 >= min_rho2


def tilted_poisson(
    y: int,
    cav: CavityProjection,
    threshold: float = DEFAULT_POISSON_THRESHOLD,
    *,
    branch: str = "auto",
    order: int = DEFAULT_ROSSBERG_ORDER,
    min_rho2: float = DEFAULT_ROSSBERG_MIN_RHO2,
) -> TiltedSummary:
    """Approximate tilted summary for Poisson counts with log link.

    Parameters
    ----------
    y : int
        Observed count.
    cav : CavityProjection
        Cavity projection ``(lam, rho2)``.
    threshold : float
        ``y = 0`` sites with ``lam`` below this use the cdf-convolution
        expansion instead of the Laplace-method (Lambert W) approximation.
    branch : {"auto", "asmussen", "rossberg"}
        Force one approximation; ``"auto"`` applies the rule in
        :func:`poisson_uses_rossberg`.
    order : int
        Truncation order of the expansion.
    min_rho2 : float
        Smallest cavity variance for which the expansion is trusted.
    """
    yi = _check_count(y)
    if branch == "auto":
        use_rossberg = poisson_uses_rossberg(yi, cav, threshold, min_rho2)
    elif branch in ("asmussen", "rossberg"):
        use_rossberg = branch == "rossberg"
    else:
        raise ValueError(f"unknown branch {branch!r}")
    if use_rossberg:
        out = _poisson_rossberg(yi, cav, order)
        if out is not None or branch == "rossberg":
            if out is None:
                raise InvalidTiltedVariance("cdf expansion returned a non-positive normaliser")
            return out
    return _poisson_asmussen(yi, cav)


def tilted_gamma(y: float, upsilon: float, cav: CavityProjection) -> TiltedSummary:
    """Laplace-method tilted summary for gamma responses with log link.

    The mean of ``Ga(upsilon, rate = upsilon exp(-eta))`` is ``exp(eta)``. The
    intractable factor is a log-normal Laplace transform at
    ``s = upsilon * y * exp(rho2 * upsilon - lam)``.
    """
    if not y > 0.0:
        raise ValueError(f"positive response expected, got {y!r}")
    if not upsilon > 0.0:
        raise ValueError(f"positive gamma shape expected, got {upsilon!r}")
    lam, rho2 = cav
    log_s = math.log(upsilon * y) + rho2 * upsilon - lam
    log_l, w = log_laplace_lognormal_asmussen(log_s, rho2)
    log_z = (
        upsilon * math.log(upsilon)
        - math.lgamma(upsilon)
        + (upsilon - 1.0) * math.log(y)
        - upsilon * lam
        + 0.5 * rho2 * upsilon * upsilon
        + log_l
    )
    # same reduction as the Poisson case with u = W/rho2 - upsilon
    u = w / rho2 - upsilon
    g = 0.5 * w / (1.0 + w) ** 2
    theta = u + g
    d_rho2 = 0.5 * u * u - (1.0 + rho2 * upsilon) * g / rho2
    return TiltedSummary(log_z, theta, 2.0 * d_rho2 - theta * theta)


def log_likelihood(kind: str, y, eta, upsilon=None) -> np.ndarray:
    """Vectorised ``log l(eta)`` for one observation, used by the oracles."""
    eta = np.asarray(eta, dtype=float)
    if kind == "probit":
        return special.log_ndtr((2 * _check_binary(y) - 1) * eta)
    if kind == "logit":
        return -np.logaddexp(0.0, -(2 * _check_binary(y) - 1) * eta)
    if kind == "poisson":
        yi = _check_count(y)
        return yi * eta - np.exp(eta) - math.lgamma(yi + 1.0)
    if kind == "gamma":
        if upsilon is None:
            raise ValueError("gamma likelihood needs a shape")
        return (
            upsilon * math.log(upsilon)
            - math.lgamma(upsilon)
            + (upsilon - 1.0) * math.log(y)
            - upsilon * eta
            - upsilon * y * np.exp(-eta)
        )
    raise ValueError(f"unknown model kind {kind!r}")


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    if nodes not in _GH_CACHE:
        t, w = np.polynomial.hermite.hermgauss(nodes)
        _GH_CACHE[nodes] = (t, np.log(w))
    return _GH_CACHE[nodes]


def tilted_quadrature(
    model,
    y,
    cav: CavityProjection,
    upsilon: Optional[float] = None,
    nodes: int = QUADRATURE_NODES,
) -> TiltedSummary:
    """Gauss-Hermite evaluation of the tilted normaliser and first two moments.

    ``model`` is a :class:`ModelSpec` or a model kind string. Nodes are
    centred at ``lam`` with scale ``sqrt(2 rho2)``; the integrand is
    accumulated in log space after subtracting its maximum, which keeps the
    double-exponential decay of the count/gamma likelihoods representable.
    """
    kind = getattr(model, "kind", model)
    if upsilon is None and isinstance(model, ModelSpec):
        upsilon = model.upsilon(0)
    lam, rho2 = cav
    t, log_w = _gauss_hermite(nodes)
    eta = lam + math.sqrt(2.0 * rho2) * t
    with np.errstate(over="ignore"):
        log_f = log_likelihood(kind, y, eta, upsilon) + log_w
    if not np.all(np.isfinite(log_f)):
        raise QuadratureError(f"{kind} integrand not finite at some node (lam={lam}, rho2={rho2})")
    top = log_f.max()
    f = np.exp(log_f - top)
    mass = f.sum()
    log_z = top + math.log(mass) - 0.5 * _LOG_PI
    f /= mass
    mean = float(f @ eta)
    var = float(f @ (eta - mean) ** 2)
    theta = (mean - lam) / rho2
    delta = (var - rho2) / (rho2 * rho2)
    return TiltedSummary(float(log_z), theta, delta)


def tilted_to_site(cav: CavityProjection, t: TiltedSummary) -> tuple[float, float]:
    """Site natural parameters ``(k, m)`` matching the tilted moments.

    Uses ``m = k*lam + Theta/(1 + rho2 Delta)``, which stays finite when
    ``Delta`` is zero.
    """
    denom = 1.0 + cav.rho2 * t.delta
    if not denom > 0.0:
        raise InvalidTiltedVariance(
            f"tilted variance not positive (1 + rho2*Delta = {denom:.3g})"
        )
    k = -t.delta / denom
    return k, k * cav.lam + t.theta / denom


@dataclass(frozen=True)
class ModelSpec:
    """Likelihood family plus per-observation gamma shapes.

    Parameters
    ----------
    kind : str
        One of ``probit``, ``logit``, ``poisson``, ``gamma``.
    shape : array_like, optional
        Gamma shapes ``upsilon_i``; required for (and only for) ``gamma``.
    """

    kind: str
    shape: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind == "gamma":
            if self.shape is None:
                raise ValueError("gamma model needs shape parameters")
            shape = np.atleast_1d(np.asarray(self.shape, dtype=float))
            if not np.all(np.isfinite(shape)) or np.any(shape <= 0):
                raise ValueError("gamma shapes must be finite and positive")
            object.__setattr__(self, "shape", shape)
        elif self.shape is not None:
            raise ValueError(f"shape parameters only apply to the gamma model, not {self.kind}")

    @property
    def is_binary(self) -> bool:
        return self.kind in ("probit", "logit")

    @property
    def has_log_link(self) -> bool:
        return self.kind in ("poisson", "gamma")

    def upsilon(self, i: int) -> Optional[float]:
        if self.shape is None:
            return None
        return float(self.shape[0] if self.shape.size == 1 else self.shape[i])

    def check_responses(self, y: np.ndarray) -> None:
        y = np.asarray(y, dtype=float)
        if self.is_binary:
            bad = ~np.isin(y, (0.0, 1.0))
            what = "binary response expected"
        elif self.kind == "poisson":
            bad = (y < 0) | (y != np.floor(y))
            what = "nonnegative integer response expected"
        else:
            bad = ~(y > 0)
            what = "positive response expected"
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"{what} (row {i}: {y[i]!r})")
        if self.kind == "gamma" and self.shape.size not in (1, y.size):
            raise ValueError("gamma shape must be a scalar or one value per observation")

    def tilted(
        self,
        y,
        cav: CavityProjection,
        i: int = 0,
        poisson_threshold: float = DEFAULT_POISSON_THRESHOLD,
    ) -> TiltedSummary:
        """Closed-form (or closed-form approximate) tilted summary for site ``i``."""
        if self.kind == "probit":
            return tilted_probit(int(y), cav)
        if self.kind == "logit":
            return tilted_logit(int(y), cav)
        if self.kind == "poisson":
            return tilted_poisson(int(y), cav, poisson_threshold)
        return tilted_gamma(float(y), self.upsilon(i), cav)

    def tilted_quadrature(self, y, cav: CavityProjection, i: int = 0) -> TiltedSummary:
        return tilted_quadrature(self.kind, y, cav, self.upsilon(i))
