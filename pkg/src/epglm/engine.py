"""Expectation propagation for GLMs with a spherical Gaussian prior.

Two kernels share one site-update routine:

``dense``
    keeps the full posterior covariance ``Omega`` (p x p); each site update
    is a rank-one correction, ``O(p^2)`` per site.
``lowrank``
    keeps ``V = Omega X^T`` (p x n) instead; each site update touches every
    column of ``V``, ``O(pn)`` per site, and ``Omega`` is rebuilt only on
    request.

Sites are Gaussian in the linear predictor, ``exp(-k_i eta^2/2 + m_i eta)``,
so the whole state is the scalars ``(k_i, m_i, log Z_i)`` plus the global
natural mean ``r`` and one of the two matrices above.

The rank-one updates go through BLAS ``dger``; its internal partitioning is
fixed for a given BLAS build and thread count, so fits are bitwise
reproducible under a fixed environment. Inside ``run_ep`` the low-rank kernel
defers its rank-one updates in blocks of ``LOWRANK_BLOCK`` sites and applies
each block as one matrix product, so ``V`` is streamed once per block rather
than twice per site. The operation count is unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.linalg import blas

from .hybrid import (
    DEFAULT_POISSON_THRESHOLD,
    CavityProjection,
    InvalidTiltedVariance,
    ModelSpec,
    QuadratureError,
    TiltedSummary,
    tilted_to_site,
)

__all__ = [
    "Dataset",
    "Prior",
    "EPConfig",
    "EPState",
    "EPResult",
    "SiteDelta",
    "Cavity",
    "NegativeCavityVariance",
    "choose_kernel",
    "cavity_dense",
    "cavity_lowrank",
    "site_log_normaliser",
    "apply_site_update",
    "run_ep",
    "finalize",
    "log_marginal",
]

logger = logging.getLogger(__name__)

KERNELS = ("auto", "dense", "lowrank")
LOWRANK_BLOCK = 32


class NegativeCavityVariance(ArithmeticError):
    """Removing a site would leave an improper cavity distribution."""


@dataclass
class Dataset:
    """Design matrix, responses and likelihood.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like, shape (n,)
    model : ModelSpec or str
    """

    X: np.ndarray
    y: np.ndarray
    model: ModelSpec

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = ModelSpec(self.model)
        X = np.array(self.X, dtype=float, order="C", ndmin=2)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[1] < 1:
            raise ValueError("X needs at least one column")
        if X.shape[0] != y.size:
            if y.size == 0:
                X = X.reshape(0, X.shape[1])
            else:
                raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("dataset contains non-finite values")
        self.model.check_responses(y)
        self.X, self.y = X, y

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Prior:
    """Spherical Gaussian prior ``N(0, nu2 I)``."""

    nu2: float

    def __post_init__(self):
        if not (self.nu2 > 0 and math.isfinite(self.nu2)):
            raise ValueError(f"prior variance must be positive, got {self.nu2!r}")


@dataclass
class EPConfig:
    """Iteration controls.

    ``damping`` is the weight of the new site parameters (1 = undamped).
    Convergence is declared when a full sweep visits every site and the
    largest ``|dk_i| + |dm_i|`` falls below ``tol``. With
    ``convergence="relative"`` each change is divided by ``1 + |k_i|`` or
    ``1 + |m_i|`` first, which suits count data whose sites reach 1e4 and
    beyond, where absolute changes bottom out at rounding noise.
    """

    tol: float = 1e-6
    max_sweeps: int = 200
    damping: float = 1.0
    kernel: str = "auto"
    poisson_threshold: float = DEFAULT_POISSON_THRESHOLD
    use_quadrature_fallback: bool = True
    full_covariance: bool = True
    cavity_guard: float = 1e-12
    symmetrize_every: int = 50
    convergence: str = "absolute"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ValueError("max_sweeps must be a positive integer")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.convergence not in ("absolute", "relative"):
            raise ValueError("convergence must be 'absolute' or 'relative'")


class SiteDelta(NamedTuple):
    """Proposed site parameters and the tilted normaliser that produced them."""

    k_new: float
    m_new: float
    log_z_tilted: float


class Cavity(NamedTuple):
    """Everything a site update needs about the cavity of site ``i``."""

    proj: CavityProjection
    r_minus: np.ndarray
    w: np.ndarray  # Omega_i x_i
    v: np.ndarray  # Omega_EP x_i
    xv: float  # x_i^T Omega_EP x_i
    omega_i: Optional[np.ndarray] = None


def choose_kernel(n: int, p: int, choice: str = "auto") -> str:
    """``dense`` when ``p < n`` (strictly), ``lowrank`` otherwise."""
    if choice not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}, got {choice!r}")
    if choice != "auto":
        return choice
    return "dense" if p < n else "lowrank"


@dataclass
class EPState:
    X: np.ndarray
    nu2: float
    kernel: str
    k: np.ndarray
    m: np.ndarray
    log_z: np.ndarray
    r: np.ndarray
    logdet_q: float
    omega: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    sweep: int = 0
    skipped: int = 0
    fallbacks: int = 0
    # deferred low-rank updates: Omega = Omega_V - U diag(c) U^T, where
    # Omega_V is the covariance that V currently reflects
    block: int = 1
    _U: Optional[np.ndarray] = field(default=None, repr=False)
    _c: Optional[np.ndarray] = field(default=None, repr=False)
    _pending: int = field(default=0, repr=False)

    @classmethod
    def initial(cls, X: np.ndarray, nu2: float, kernel: str) -> "EPState":
        """State matching the prior: all sites zero."""
        n, p = X.shape
        state = cls(
            X=X,
            nu2=float(nu2),
            kernel=kernel,
            k=np.zeros(n),
            m=np.zeros(n),
            log_z=np.zeros(n),
            r=np.zeros(p),
            logdet_q=-p * math.log(nu2),
        )
        if kernel == "dense":
            state.omega = np.asfortranarray(nu2 * np.eye(p))
        elif kernel == "lowrank":
            state.V = np.asfortranarray(nu2 * X.T)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        return state

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column(self, i: int) -> np.ndarray:
        """``v_i = Omega_EP x_i``."""
        if self.kernel == "lowrank":
            if not self._pending:
                return self.V[:, i]
            U, c = self._U[:, : self._pending], self._c[: self._pending]
            return self.V[:, i] - U @ (c * (self.X[i] @ U))
        return self.omega @ self.X[i]

    def defer(self, c: float, v: np.ndarray) -> None:
        """Queue ``Omega -= c v v^T`` and flush once ``block`` updates are queued."""
        if self._U is None or self._U.shape[1] != self.block:
            self._U = np.empty((self.p, self.block), order="F")
            self._c = np.empty(self.block)
        self._U[:, self._pending] = v
        self._c[self._pending] = c
        self._pending += 1
        if self._pending == self.block:
            self.flush()

    def flush(self) -> None:
        """Apply queued low-rank updates to ``V``: ``V -= U diag(c) (X U)^T``."""
        if not self._pending:
            return
        U, c = self._U[:, : self._pending], self._c[: self._pending]
        XU = self.X @ U
        self.V = blas.dgemm(-1.0, U * c, XU, beta=1.0, c=self.V, trans_b=True, overwrite_c=True)
        self._pending = 0


def _guard(state: EPState, i: int, xv: float, guard: float) -> float:
    one_minus = 1.0 - state.k[i] * xv
    if not one_minus > guard:
        raise NegativeCavityVariance(
            f"site {i}: 1 - k_i x_i'Omega x_i = {one_minus:.3g} leaves an improper cavity"
        )
    return one_minus


def cavity_dense(state: EPState, i: int, guard: float = 1e-12) -> Cavity:
    """Cavity of site ``i`` from the full covariance by a rank-one Woodbury step.

    ``Omega_i = Omega + k_i/(1 - k_i x'Omega x) (Omega x)(Omega x)^T``; no
    matrix inverse is formed.
    """
    x = state.X[i]
    v = state.omega @ x
    xv = float(x @ v)
    one_minus = _guard(state, i, xv, guard)
    omega_i = state.omega + (state.k[i] / one_minus) * np.outer(v, v)
    r_minus = state.r - state.m[i] * x
    w = omega_i @ x
    proj = CavityProjection(float(w @ r_minus), float(x @ w))
    return Cavity(proj, r_minus, w, v, xv, omega_i)


def cavity_lowrank(state: EPState, i: int, guard: float = 1e-12) -> Cavity:
    """Cavity of site ``i`` from the stored column ``v_i``: ``w_i = v_i / (1 - k_i x'v_i)``."""
    x = state.X[i]
    v = state.column(i).copy()  # dger overwrites V in place
    xv = float(x @ v)
    d = 1.0 / _guard(state, i, xv, guard)
    w = d * v
    r_minus = state.r - state.m[i] * x
    proj = CavityProjection(float(w @ r_minus), d * xv)
    return Cavity(proj, r_minus, w, v, xv)


def site_log_normaliser(proj: CavityProjection, k: float, m: float, log_z_tilted: float) -> float:
    """Site constant ``log Z_i`` enforcing equal zeroth moments.

    Needs only the cavity projection: ``lam = r_{-i}' Omega_i x_i`` and
    ``rho2 = x_i' Omega_i x_i``.
    """
    lam, rho2 = proj
    one_plus = 1.0 + k * rho2
    quad = (2.0 * m * lam + m * m * rho2 - k * lam * lam) / one_plus
    return 0.5 * (quad - math.log(one_plus)) - log_z_tilted


def apply_site_update(
    state: EPState,
    i: int,
    delta: SiteDelta,
    config: Optional[EPConfig] = None,
    cavity: Optional[Cavity] = None,
) -> Optional[float]:
    """Move site ``i`` toward ``delta`` (damped) and update the global state.

    Returns
    -------
    float or None
        ``|dk| + |dm|`` actually applied (scaled per ``config.convergence``),
        or ``None`` when the update was
        rejected because it would make the posterior covariance improper. A
        rejected update leaves the state untouched and bumps ``state.skipped``.
    """
    config = config or EPConfig()
    if cavity is None:
        cavity = (cavity_lowrank if state.kernel == "lowrank" else cavity_dense)(
            state, i, config.cavity_guard
        )
    eps = config.damping
    k_old, m_old = state.k[i], state.m[i]
    k_t = (1.0 - eps) * k_old + eps * delta.k_new
    m_t = (1.0 - eps) * m_old + eps * delta.m_new
    dk, dm = k_t - k_old, m_t - m_old
    one_plus = 1.0 + dk * cavity.xv
    if not (one_plus > config.cavity_guard and math.isfinite(k_t) and math.isfinite(m_t)):
        state.skipped += 1
        return None
    x = state.X[i]

    if dk != 0.0:
        if state.kernel == "dense":
            # new covariance = Omega_i + (var_t - rho2)/rho2^2 w w^T, with the
            # coefficient rewritten as -k_t/(1 + k_t rho2) to avoid cancellation
            rho2 = cavity.proj.rho2
            coef = -k_t / (1.0 + k_t * rho2)
            omega_i = cavity.omega_i
            if omega_i is None:
                omega_i = state.omega + (k_old / (1.0 - k_old * cavity.xv)) * np.outer(
                    cavity.v, cavity.v
                )
            state.omega = blas.dger(
                coef, cavity.w, cavity.w, a=np.asfortranarray(omega_i), overwrite_a=True
            )
        else:
            c = dk / one_plus
            if state.block > 1:
                state.defer(c, cavity.v)
            else:
                xV = x @ state.V
                state.V = blas.dger(-c, cavity.v, xV, a=state.V, overwrite_a=True)
        state.logdet_q += math.log1p(dk * cavity.xv)

    state.r = cavity.r_minus + m_t * x
    state.k[i] = k_t
    state.m[i] = m_t
    state.log_z[i] = site_log_normaliser(cavity.proj, k_t, m_t, delta.log_z_tilted)
    if config.convergence == "relative":
        return abs(dk) / (1.0 + abs(k_t)) + abs(dm) / (1.0 + abs(m_t))
    return abs(dk) + abs(dm)


def _tilted(model: ModelSpec, y, i: int, proj: CavityProjection, config: EPConfig, state: EPState):
    try:
        t = model.tilted(y, proj, i, config.poisson_threshold)
        k_new, m_new = tilted_to_site(proj, t)
        if math.isfinite(t.log_z) and math.isfinite(k_new) and math.isfinite(m_new):
            return t, k_new, m_new
    except (InvalidTiltedVariance, ValueError, OverflowError, ZeroDivisionError):
        if not config.use_quadrature_fallback:
            raise
    if not config.use_quadrature_fallback:
        raise InvalidTiltedVariance(f"site {i}: non-finite closed-form update")
    state.fallbacks += 1
    t = model.tilted_quadrature(y, proj, i)
    k_new, m_new = tilted_to_site(proj, t)
    return t, k_new, m_new


def _visit(state: EPState, dataset: Dataset, i: int, config: EPConfig) -> Optional[float]:
    try:
        if state.kernel == "lowrank":
            cav = cavity_lowrank(state, i, config.cavity_guard)
        else:
            cav = cavity_dense(state, i, config.cavity_guard)
        t, k_new, m_new = _tilted(dataset.model, dataset.y[i], i, cav.proj, config, state)
    except (NegativeCavityVariance, InvalidTiltedVariance, QuadratureError) as exc:
        logger.debug("skipping site %d: %s", i, exc)
        state.skipped += 1
        return None
    return apply_site_update(state, i, SiteDelta(k_new, m_new, t.log_z), config, cav)


def _refine(state: EPState, xi: np.ndarray, apply_omega) -> np.ndarray:
    # One step of iterative refinement on Q xi = r. Forming xi as Omega r loses
    # about eps |Omega| |r| when site means are large; the residual is matrix-free.
    X, k = state.X, state.k
    resid = state.r - xi / state.nu2 - X.T @ (k * (X @ xi))
    return xi + apply_omega(resid)


def finalize(state: EPState, diag_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance (or its diagonal) from a fitted state.

    The low-rank kernel rebuilds ``Omega = nu2 I - nu2 V K X`` in ``O(p^2 n)``,
    or only its diagonal in ``O(pn)``. The mean gets one refinement step
    against ``Q = I/nu2 + X'KX`` at ``O(pn)`` extra cost.
    """
    nu2 = state.nu2
    if state.kernel == "dense":
        omega = 0.5 * (state.omega + state.omega.T)
        xi = _refine(state, omega @ state.r, lambda v: omega @ v)
        return xi, (np.diag(omega).copy() if diag_only else omega)
    state.flush()
    KX = state.k[:, None] * state.X
    apply_omega = lambda v: nu2 * v - nu2 * (state.V @ (KX @ v))
    xi = _refine(state, apply_omega(state.r), apply_omega)
    if diag_only:
        return xi, nu2 - nu2 * np.einsum("ji,ij->j", state.V, KX)
    omega = nu2 * np.eye(state.p) - nu2 * (state.V @ KX)
    return xi, 0.5 * (omega + omega.T)


def log_marginal(state: EPState, xi: Optional[np.ndarray] = None) -> float:
    """EP estimate of the log marginal likelihood.

    ``(r'xi - log|Q| - p log nu2)/2 - sum_i log Z_i`` with the incrementally
    tracked ``log|Q|``.
    """
    if xi is None:
        xi = finalize(state, diag_only=True)[0]
    return 0.5 * (float(state.r @ xi) - state.logdet_q - state.p * math.log(state.nu2)) - float(
        state.log_z.sum()
    )


@dataclass
class EPResult:
    """Fitted Gaussian approximation ``N(xi, omega)`` plus diagnostics.

    ``omega`` is the full covariance, or only its diagonal when the low-rank
    kernel ran without ``full_covariance``.
    """

    xi: np.ndarray
    omega: np.ndarray
    log_ml: float
    converged: bool
    sweeps: int
    skipped_sites: int
    max_site_delta: float
    kernel: str
    model: ModelSpec
    nu2: float
    state: Optional[EPState] = field(default=None, repr=False)
    fallbacks: int = 0

    @property
    def full(self) -> bool:
        return self.omega.ndim == 2

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.omega).copy() if self.full else self.omega

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variances)


def run_ep(
    dataset: Dataset,
    prior: Union[Prior, float],
    config: Optional[EPConfig] = None,
) -> EPResult:
    """Fit the EP approximation.

    Sites are visited in index order every sweep until convergence or
    ``config.max_sweeps``. Non-convergence is reported through
    ``converged=False`` rather than an exception.
    """
    config = config or EPConfig()
    nu2 = prior.nu2 if isinstance(prior, Prior) else Prior(float(prior)).nu2
    kernel = choose_kernel(dataset.n, dataset.p, config.kernel)
    state = EPState.initial(dataset.X, nu2, kernel)
    if kernel == "lowrank":
        state.block = LOWRANK_BLOCK

    converged = dataset.n == 0
    max_delta = 0.0
    while not converged and state.sweep < config.max_sweeps:
        state.sweep += 1
        skipped_before = state.skipped
        max_delta = 0.0
        for i in range(dataset.n):
            change = _visit(state, dataset, i, config)
            if change is not None and change > max_delta:
                max_delta = change
        if kernel == "lowrank":
            state.flush()
        if kernel == "dense" and state.sweep % config.symmetrize_every == 0:
            state.omega = np.asfortranarray(0.5 * (state.omega + state.omega.T))
        logger.debug("sweep %d: max site change %.3e", state.sweep, max_delta)
        converged = bool(state.skipped == skipped_before and max_delta < config.tol)

    if not converged:
        logger.warning(
            "EP did not converge in %d sweeps (last max site change %.3e)",
            state.sweep,
            max_delta,
        )
    diag_only = kernel == "lowrank" and not config.full_covariance
    xi, omega = finalize(state, diag_only=diag_only)
    return EPResult(
        xi=xi,
        omega=omega,
        log_ml=log_marginal(state, xi),
        converged=converged,
        sweeps=state.sweep,
        skipped_sites=state.skipped,
        max_site_delta=max_delta,
        kernel=kernel,
        model=dataset.model,
        nu2=nu2,
        state=state,
        fallbacks=state.fallbacks,
    )
