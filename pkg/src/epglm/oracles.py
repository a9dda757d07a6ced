"""Slow, independent reference computations used to check the fast paths.

None of these share linear algebra with :mod:`epglm.engine`; they only share
the per-site tilted summaries, so agreement with them tests the incremental
update machinery.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from .engine import Dataset, EPConfig, EPResult, EPState, Prior
from .hybrid import CavityProjection, InvalidTiltedVariance, QuadratureError, log_likelihood, tilted_to_site

__all__ = ["naive_ep", "grid_posterior", "mc_predictive", "BoundaryMassError"]

_MAX_NAIVE_DIM = 100
_MAX_GRID_NODES = 2001
_BOUNDARY_MASS = 1e-10
_MC_CHUNK = 100_000


class BoundaryMassError(ValueError):
    """The grid box is too small: noticeable posterior mass sits on its edge."""


def _psi(r: np.ndarray, Q: np.ndarray) -> float:
    # log of int exp(-b'Qb/2 + r'b) db, without the (2 pi)^(p/2)
    sign, logdet = np.linalg.slogdet(Q)
    if sign <= 0:
        raise np.linalg.LinAlgError("precision matrix is not positive definite")
    return 0.5 * float(r @ np.linalg.solve(Q, r)) - 0.5 * logdet


def _tilted_summary(model, y, i, proj, config):
    try:
        t = model.tilted(y, proj, i, config.poisson_threshold)
        k, m = tilted_to_site(proj, t)
        if all(map(math.isfinite, (t.log_z, k, m))):
            return t
    except (InvalidTiltedVariance, ValueError, OverflowError, ZeroDivisionError):
        pass
    if not config.use_quadrature_fallback:
        raise InvalidTiltedVariance(f"site {i}: closed-form update failed")
    return model.tilted_quadrature(y, proj, i)


def naive_ep(
    dataset: Dataset,
    prior: Union[Prior, float],
    config: Optional[EPConfig] = None,
) -> EPResult:
    """Textbook EP with explicit site matrices and a full inverse per visit.

    Each site stores ``Q_i = k_i x_i x_i'`` and ``r_i = m_i x_i`` as full
    arrays. Visiting site ``i`` inverts the cavity precision directly, forms
    the hybrid mean and covariance in ``beta`` space, and reads off the new
    site as ``Sigma_h^{-1} - Q_{-i}``. Site constants come from differences of
    Gaussian log-normalisers. ``O(p^3)`` per site.
    """
    config = config or EPConfig()
    nu2 = prior.nu2 if isinstance(prior, Prior) else Prior(float(prior)).nu2
    X, y, model = dataset.X, dataset.y, dataset.model
    n, p = X.shape
    if n > _MAX_NAIVE_DIM or p > _MAX_NAIVE_DIM:
        raise ValueError(f"naive_ep is for n, p <= {_MAX_NAIVE_DIM}")

    Q0 = np.eye(p) / nu2
    Qs = np.zeros((n, p, p))
    rs = np.zeros((n, p))
    log_z = np.zeros(n)
    k = np.zeros(n)
    m = np.zeros(n)
    skipped = 0
    converged = n == 0
    sweeps = 0
    max_delta = 0.0
    eps = config.damping

    while not converged and sweeps < config.max_sweeps:
        sweeps += 1
        max_delta = 0.0
        skipped_before = skipped
        for i in range(n):
            x = X[i]
            Q = Q0 + Qs.sum(axis=0)
            r = rs.sum(axis=0)
            Q_cav = Q - Qs[i]
            r_cav = r - rs[i]
            try:
                np.linalg.cholesky(Q_cav)
                S_cav = np.linalg.inv(Q_cav)
                mu_cav = np.linalg.solve(Q_cav, r_cav)
                Sx = S_cav @ x
                proj = CavityProjection(float(x @ mu_cav), float(x @ Sx))
                t = _tilted_summary(model, y[i], i, proj, config)
            except (np.linalg.LinAlgError, InvalidTiltedVariance, QuadratureError):
                skipped += 1
                continue
            lam, rho2 = proj
            mean_t = lam + rho2 * t.theta
            var_t = rho2 + rho2 * rho2 * t.delta
            mu_h = mu_cav + Sx * (mean_t - lam) / rho2
            S_h = S_cav + np.outer(Sx, Sx) * (var_t - rho2) / rho2**2
            P_h = np.linalg.inv(S_h)
            Q_new = P_h - Q_cav
            r_new = P_h @ mu_h - r_cav
            xx = float(x @ x)
            k_new = float(x @ Q_new @ x) / xx**2
            m_new = float(x @ r_new) / xx
            k_t = (1 - eps) * k[i] + eps * k_new
            m_t = (1 - eps) * m[i] + eps * m_new
            Q_site = k_t * np.outer(x, x)
            r_site = m_t * x
            try:
                np.linalg.cholesky(Q_cav + Q_site)
            except np.linalg.LinAlgError:
                skipped += 1
                continue
            dk, dm = abs(k_t - k[i]), abs(m_t - m[i])
            if config.convergence == "relative":
                dk, dm = dk / (1.0 + abs(k_t)), dm / (1.0 + abs(m_t))
            max_delta = max(max_delta, dk + dm)
            Qs[i], rs[i], k[i], m[i] = Q_site, r_site, k_t, m_t
            # zeroth moments of cavity x site and cavity x likelihood agree
            log_z[i] = _psi(r_cav + r_site, Q_cav + Q_site) - _psi(r_cav, Q_cav) - t.log_z
        converged = bool(skipped == skipped_before and max_delta < config.tol)

    Q = Q0 + Qs.sum(axis=0)
    r = rs.sum(axis=0)
    omega = np.linalg.inv(Q)
    omega = 0.5 * (omega + omega.T)
    xi = np.linalg.solve(Q, r)
    log_ml = _psi(r, Q) + 0.5 * p * math.log(1.0 / nu2) - float(log_z.sum())
    state = EPState(
        X=X, nu2=nu2, kernel="dense", k=k, m=m, log_z=log_z, r=r,
        logdet_q=float(np.linalg.slogdet(Q)[1]), omega=np.asfortranarray(omega),
        sweep=sweeps, skipped=skipped,
    )
    return EPResult(
        xi=xi, omega=omega, log_ml=log_ml, converged=converged, sweeps=sweeps,
        skipped_sites=skipped, max_site_delta=max_delta, kernel="naive",
        model=model, nu2=nu2, state=state,
    )


def _trapezoid_weights(nodes: int, bound: float) -> tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(-bound, bound, nodes)
    w = np.full(nodes, grid[1] - grid[0])
    w[[0, -1]] *= 0.5
    return grid, w


def grid_posterior(
    dataset: Dataset,
    prior: Union[Prior, float],
    bounds: float = 6.0,
    nodes_per_dim: int = 401,
    center=None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact posterior moments and log evidence for ``p <= 2`` on a tensor grid.

    Trapezoid rule on ``center + [-bounds, bounds]^p`` (``center`` defaults to
    the origin), normalised in log space. Shift and shrink the box for
    concentrated posteriors so the node spacing resolves them.

    Raises
    ------
    BoundaryMassError
        If more than ``1e-10`` of the mass lies on the outer ring of nodes.
    """
    nu2 = prior.nu2 if isinstance(prior, Prior) else Prior(float(prior)).nu2
    p = dataset.p
    if p > 2:
        raise ValueError("grid_posterior supports p <= 2")
    if not 2 <= nodes_per_dim <= _MAX_GRID_NODES:
        raise ValueError(f"nodes_per_dim must be in [2, {_MAX_GRID_NODES}]")
    grid, w1 = _trapezoid_weights(nodes_per_dim, bounds)
    axes = np.meshgrid(*([grid] * p), indexing="ij")
    offsets = np.stack([a.ravel() for a in axes], axis=1)
    c = np.zeros(p) if center is None else np.asarray(center, dtype=float)
    if c.shape != (p,):
        raise ValueError(f"center must have length {p}")
    B = c + offsets
    log_w = np.log(w1)
    log_weight = sum(np.meshgrid(*([log_w] * p), indexing="ij")).ravel()

    log_f = -0.5 * np.sum(B * B, axis=1) / nu2 - 0.5 * p * math.log(2 * math.pi * nu2)
    model = dataset.model
    for i in range(dataset.n):
        eta = B @ dataset.X[i]
        log_f += log_likelihood(model.kind, dataset.y[i], eta, model.upsilon(i))

    log_terms = log_f + log_weight
    log_ml = float(special.logsumexp(log_terms))
    prob = np.exp(log_terms - log_ml)

    edge = np.zeros(B.shape[0], dtype=bool)
    for j in range(p):
        edge |= np.isclose(np.abs(offsets[:, j]), bounds)
    if prob[edge].sum() > _BOUNDARY_MASS:
        raise BoundaryMassError(
            f"posterior mass {prob[edge].sum():.2e} on the grid boundary; increase bounds"
        )
    mean = prob @ B
    centred = B - mean
    cov = (centred * prob[:, None]).T @ centred
    return mean, cov, log_ml


def _default_functional(kind: str) -> Callable[[np.ndarray], np.ndarray]:
    if kind == "probit":
        return special.ndtr
    if kind == "logit":
        return special.expit
    return np.exp


def mc_predictive(
    result: EPResult,
    x_new,
    draws: int = 1_000_000,
    seed: int = 0,
    functional: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[float, float]:
    """Monte Carlo mean of ``f(x'beta)`` with ``beta`` drawn from ``N(xi, Omega)``.

    ``beta = xi + L z`` with ``L`` the symmetric square root of ``Omega``.
    Defaults to the predictive probability (binary) or mean (log link).

    Returns
    -------
    estimate, std_error : float
    """
    if draws < 10_000:
        raise ValueError("mc_predictive needs at least 1e4 draws")
    if not result.full:
        raise ValueError("mc_predictive needs the full covariance")
    evals, evecs = np.linalg.eigh(result.omega)
    if evals.min() <= 0:
        raise np.linalg.LinAlgError("posterior covariance is not positive definite")
    L = (evecs * np.sqrt(evals)) @ evecs.T
    x = np.asarray(x_new, dtype=float)
    f = functional or _default_functional(result.model.kind)
    loc = float(x @ result.xi)
    direction = L @ x  # x' L z = (L x)' z since L is symmetric
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    remaining = draws
    while remaining:
        size = min(remaining, _MC_CHUNK)
        z = rng.standard_normal((size, x.size))
        vals = f(loc + z @ direction)
        total += float(vals.sum())
        total_sq += float(vals @ vals)
        remaining -= size
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0) * draws / (draws - 1)
    return mean, math.sqrt(var / draws)
