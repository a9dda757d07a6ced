"""Closed-form predictive quantities under a fitted EP approximation.

For a new covariate vector ``x`` the linear predictor is Gaussian under the
approximation, ``x'beta ~ N(x'xi, u)`` with ``u = x' Omega x``. Probit and
log-link predictions integrate exactly against that Gaussian; the logit
prediction reuses the probit-matched approximation of the logistic cdf.
"""

from __future__ import annotations

import math
from typing import Iterable, Union

import numpy as np
from scipy import special

from .engine import EPResult, EPState, finalize

__all__ = [
    "quad_form",
    "predict_probit",
    "predict_logit",
    "predict_log_link_mean",
    "predict",
    "PREDICTION_METHODS",
]

_PI_OVER_8 = math.pi / 8.0

# what each model's default prediction means; surfaced in CLI output
PREDICTION_METHODS = {
    "probit": "exact: Phi(m / sqrt(1 + u))",
    "logit": "approximate: expit(m / sqrt(1 + u pi/8))",
    "logit-plug-in": "approximate: Phi(m / sqrt(8/pi + u))",
    "poisson": "exact: exp(m + u/2)",
    "gamma": "exact: exp(m + u/2)",
}


def _state_of(fit: Union[EPResult, EPState]) -> EPState:
    state = fit.state if isinstance(fit, EPResult) else fit
    if state is None:
        raise ValueError("prediction needs the fitted EP state")
    return state


def _as_query(state: EPState, x_new) -> np.ndarray:
    x = np.asarray(x_new, dtype=float)
    if x.shape != (state.p,):
        raise ValueError(f"query must have length {state.p}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("query contains non-finite values")
    return x


def quad_form(fit: Union[EPResult, EPState], x_new) -> float:
    """``u = x' Omega x`` without forming ``Omega`` in the low-rank kernel.

    Low-rank: ``u = nu2 (x'x - (V'x)' K (X x))``, ``O(pn)``.
    """
    state = _state_of(fit)
    x = _as_query(state, x_new)
    if state.kernel == "dense":
        u = float(x @ state.omega @ x)
    else:
        u = state.nu2 * (float(x @ x) - float((x @ state.V) @ (state.k * (state.X @ x))))
    return max(u, 0.0)


def _projection(fit, x_new) -> tuple[float, float]:
    state = _state_of(fit)
    x = _as_query(state, x_new)
    xi = fit.xi if isinstance(fit, EPResult) else None
    if xi is None:
        xi = finalize(state, diag_only=True)[0]
    return float(x @ xi), quad_form(state, x)


def predict_probit(result: EPResult, x_new, *, plug_in: bool = False) -> float:
    """Predictive ``P(y_new = 1)`` for a binary model.

    Exact for probit fits. A logit fit is accepted only with ``plug_in=True``,
    which rescales the projection so the probit formula mimics a logistic cdf.
    """
    kind = result.model.kind
    if kind == "probit":
        m, u = _projection(result, x_new)
        return float(special.ndtr(m / math.sqrt(1.0 + u)))
    if kind == "logit" and plug_in:
        m, u = _projection(result, x_new)
        return float(special.ndtr(m / math.sqrt(1.0 / _PI_OVER_8 + u)))
    raise ValueError(f"probit prediction is not defined for a {kind} fit")


def predict_logit(result: EPResult, x_new) -> float:
    """Approximate ``P(y_new = 1)`` for a logit fit, ``expit(m / sqrt(1 + u pi/8))``."""
    if result.model.kind != "logit":
        raise ValueError(f"logit prediction is not defined for a {result.model.kind} fit")
    m, u = _projection(result, x_new)
    return float(special.expit(m / math.sqrt(1.0 + u * _PI_OVER_8)))


def predict_log_link_mean(result: EPResult, x_new) -> float:
    """Predictive mean ``exp(m + u/2)`` for Poisson and gamma fits."""
    if not result.model.has_log_link:
        raise ValueError(f"log-link mean is not defined for a {result.model.kind} fit")
    m, u = _projection(result, x_new)
    return math.exp(m + 0.5 * u)


def predict(result: EPResult, rows: Iterable, *, plug_in: bool = False) -> np.ndarray:
    """Default prediction for each query row, evaluated one row at a time."""
    kind = result.model.kind
    if kind == "probit":
        fn = predict_probit
    elif kind == "logit":
        fn = (lambda r, x: predict_probit(r, x, plug_in=True)) if plug_in else predict_logit
    else:
        fn = predict_log_link_mean
    return np.array([fn(result, x) for x in rows], dtype=float)
