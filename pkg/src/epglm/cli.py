"""Command-line interface: ``epglm fit | predict | simulate``.

Exit codes: 0 success, 2 bad input (nothing written), 3 fit did not converge
(results are still written). Diagnostics go to stderr; data only to files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .engine import Dataset, EPConfig, EPResult, EPState, Prior, run_ep
from .hybrid import DEFAULT_POISSON_THRESHOLD, MODEL_KINDS, ModelSpec
from .io import InputError, Standardizer, load_csv, read_table, simulate, standardize, write_csv
from .prediction import PREDICTION_METHODS, predict

__all__ = ["main", "run_cli", "OUTPUT_SCHEMA", "SCHEMA_VERSION", "RunConfig", "save_fit", "load_fit"]

logger = logging.getLogger("epglm")

SCHEMA_VERSION = "ep-glm/1"
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 2, 3
DEFAULT_PRIOR_VAR = 25.0

_NUM_LIST = {"type": "array", "items": {"type": "number"}}
_PREDICTIONS = {
    "type": ["object", "null"],
    "required": ["method", "values"],
    "properties": {"method": {"type": "string"}, "values": _NUM_LIST},
}

OUTPUT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "command", "model", "predictions"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "command": {"enum": ["fit", "predict"]},
        "model": {"enum": list(MODEL_KINDS)},
        "predictions": _PREDICTIONS,
        "n": {"type": "integer", "minimum": 0},
        "p": {"type": "integer", "minimum": 1},
        "prior_var": {"type": "number", "exclusiveMinimum": 0},
        "columns": {"type": "array", "items": {"type": "string"}},
        "posterior": {
            "type": "object",
            "required": ["mean", "sd"],
            "properties": {
                "mean": _NUM_LIST,
                "sd": _NUM_LIST,
                "covariance": {"type": "array", "items": _NUM_LIST},
            },
        },
        "log_marginal_likelihood": {"type": "number"},
        "standardization": {
            "type": ["object", "null"],
            "properties": {"center": _NUM_LIST, "scale": _NUM_LIST},
        },
        "diagnostics": {
            "type": "object",
            "required": ["converged", "sweeps", "skipped_sites", "kernel", "wall_time_s"],
            "properties": {
                "converged": {"type": "boolean"},
                "sweeps": {"type": "integer", "minimum": 0},
                "skipped_sites": {"type": "integer", "minimum": 0},
                "max_site_delta": {"type": "number"},
                "quadrature_fallbacks": {"type": "integer", "minimum": 0},
                "kernel": {"enum": ["dense", "lowrank"]},
                "wall_time_s": {"type": "number", "minimum": 0},
            },
        },
    },
    "allOf": [
        {
            "if": {"properties": {"command": {"const": "fit"}}},
            "then": {
                "required": [
                    "n", "p", "prior_var", "columns", "posterior",
                    "log_marginal_likelihood", "diagnostics",
                ]
            },
        }
    ],
}


@dataclass
class RunConfig:
    """Everything a ``fit`` invocation needs, validated once up front."""

    model: str
    data: Path
    out: Path
    response: str = "y"
    prior_var: Optional[float] = None
    prior_var_over_p: Optional[float] = None
    kernel: str = "auto"
    tol: float = 1e-6
    max_sweeps: int = 200
    damping: float = 1.0
    standardize: bool = False
    intercept: bool = False
    gamma_shape: Optional[float] = None
    gamma_shape_col: Optional[str] = None
    poisson_threshold: float = DEFAULT_POISSON_THRESHOLD
    full_covariance: bool = False
    predict: Optional[Path] = None
    state: Optional[Path] = None
    csv_summary: Optional[Path] = None
    header: bool = True
    plug_in: bool = False
    relative_tol: bool = False

    def __post_init__(self):
        if self.prior_var is not None and self.prior_var_over_p is not None:
            raise InputError("give only one of --prior-var and --prior-var-over-p")
        for name in ("prior_var", "prior_var_over_p"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise InputError(f"--{name.replace('_', '-')} must be positive")
        has_shape = self.gamma_shape is not None or self.gamma_shape_col is not None
        if self.model == "gamma" and not has_shape:
            raise InputError("the gamma model needs --gamma-shape or --gamma-shape-col")
        if self.model != "gamma" and has_shape:
            raise InputError("--gamma-shape/--gamma-shape-col only apply to the gamma model")
        if self.gamma_shape is not None and self.gamma_shape_col is not None:
            raise InputError("give only one of --gamma-shape and --gamma-shape-col")
        if self.plug_in and self.model != "logit":
            raise InputError("--plug-in only applies to the logit model")

    def nu2(self, p: int) -> float:
        if self.prior_var_over_p is not None:
            return self.prior_var_over_p / p
        return self.prior_var if self.prior_var is not None else DEFAULT_PRIOR_VAR

    def ep_config(self) -> EPConfig:
        return EPConfig(
            tol=self.tol,
            max_sweeps=self.max_sweeps,
            damping=self.damping,
            kernel=self.kernel,
            poisson_threshold=self.poisson_threshold,
            full_covariance=self.full_covariance,
            convergence="relative" if self.relative_tol else "absolute",
        )


def save_fit(path, result: EPResult, columns, transform: Optional[Standardizer], intercept: bool):
    """Store a fit losslessly so that later predictions are bit-identical."""
    st = result.state
    arrays = dict(
        X=st.X, k=st.k, m=st.m, log_z=st.log_z, r=st.r, xi=result.xi, omega=result.omega,
        nu2=st.nu2, logdet_q=st.logdet_q, kernel=st.kernel, model=result.model.kind,
        columns=np.array(columns, dtype=str), intercept=intercept, log_ml=result.log_ml,
    )
    if st.kernel == "dense":
        arrays["Omega_ep"] = st.omega
    else:
        arrays["V"] = st.V
    if result.model.shape is not None:
        arrays["shape"] = result.model.shape
    if transform is not None:
        arrays["center"], arrays["scale"] = transform.center, transform.scale
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_fit(path) -> tuple[EPResult, list[str], Optional[Standardizer], bool]:
    """Inverse of :func:`save_fit`."""
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: cannot read fitted state ({exc})") from None
    with z:
        kind = str(z["model"])
        kernel = str(z["kernel"])
        model = ModelSpec(kind, z["shape"] if "shape" in z else None)
        state = EPState(
            X=z["X"], nu2=float(z["nu2"]), kernel=kernel, k=z["k"], m=z["m"],
            log_z=z["log_z"], r=z["r"], logdet_q=float(z["logdet_q"]),
            omega=np.asfortranarray(z["Omega_ep"]) if kernel == "dense" else None,
            V=np.asfortranarray(z["V"]) if kernel == "lowrank" else None,
        )
        transform = Standardizer(z["center"], z["scale"]) if "center" in z else None
        result = EPResult(
            xi=z["xi"], omega=z["omega"], log_ml=float(z["log_ml"]), converged=True,
            sweeps=0, skipped_sites=0, max_site_delta=0.0, kernel=kernel, model=model,
            nu2=state.nu2, state=state,
        )
        return result, [str(c) for c in z["columns"]], transform, bool(z["intercept"])


def _design(X: np.ndarray, intercept: bool) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X]) if intercept else X


def _query_rows(path, columns, header, intercept, transform) -> np.ndarray:
    table = read_table(path, header)
    wanted = columns[1:] if intercept else columns
    if header:
        X = table.data[:, [table.index(c) for c in wanted]]
    else:
        if table.data.shape[1] < len(wanted):
            raise InputError(f"{path}: expected {len(wanted)} covariate columns")
        X = table.data[:, : len(wanted)]
    X = _design(X, intercept)
    return transform.apply(X) if transform is not None else X


def _write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _predictions(result: EPResult, rows, plug_in: bool) -> dict:
    kind = result.model.kind
    method = PREDICTION_METHODS["logit-plug-in" if plug_in else kind]
    return {"method": method, "values": predict(result, rows, plug_in=plug_in).tolist()}


def _fit(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    dataset, names = load_csv(
        cfg.data, cfg.response, header=cfg.header, model=cfg.model,
        shape=cfg.gamma_shape, shape_column=cfg.gamma_shape_col,
    )
    X = _design(dataset.X, cfg.intercept)
    columns = (["(intercept)"] if cfg.intercept else []) + names
    transform = None
    if cfg.standardize:
        X, transform = standardize(X, intercept=cfg.intercept, names=columns)
    dataset = Dataset(X, dataset.y, dataset.model)
    rows = None
    if cfg.predict is not None:
        rows = _query_rows(cfg.predict, columns, cfg.header, cfg.intercept, transform)

    nu2 = cfg.nu2(dataset.p)
    result = run_ep(dataset, Prior(nu2), cfg.ep_config())
    doc = {
        "schema": SCHEMA_VERSION,
        "command": "fit",
        "model": cfg.model,
        "n": dataset.n,
        "p": dataset.p,
        "prior_var": nu2,
        "columns": columns,
        "posterior": {"mean": result.xi.tolist(), "sd": result.sd.tolist()},
        "log_marginal_likelihood": result.log_ml,
        "standardization": transform.to_dict() if transform is not None else None,
        "predictions": _predictions(result, rows, cfg.plug_in) if rows is not None else None,
    }
    if cfg.full_covariance:
        doc["posterior"]["covariance"] = result.omega.tolist()
    doc["diagnostics"] = {
        "converged": result.converged,
        "sweeps": result.sweeps,
        "skipped_sites": result.skipped_sites,
        "max_site_delta": result.max_site_delta,
        "quadrature_fallbacks": result.fallbacks,
        "kernel": result.kernel,
        "wall_time_s": time.perf_counter() - t0,
    }
    _write_atomic(cfg.out, _dump(doc))
    if cfg.state is not None:
        save_fit(cfg.state, result, columns, transform, cfg.intercept)
    if cfg.csv_summary is not None:
        _write_summary(cfg.csv_summary, columns, result)
    logger.info(
        "fit %s: n=%d p=%d kernel=%s sweeps=%d log_ml=%.6g",
        cfg.model, dataset.n, dataset.p, result.kernel, result.sweeps, result.log_ml,
    )
    if not result.converged:
        logger.error("EP did not converge after %d sweeps; results written anyway", result.sweeps)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _write_summary(path, columns, result: EPResult) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["column", "mean", "sd"])
    for name, mu, sd in zip(columns, result.xi, result.sd):
        w.writerow([name, repr(float(mu)), repr(float(sd))])
    _write_atomic(path, buf.getvalue())


def _predict(args) -> int:
    result, columns, transform, intercept = load_fit(args.state)
    if args.plug_in and result.model.kind != "logit":
        raise InputError("--plug-in only applies to the logit model")
    rows = _query_rows(args.predict, columns, not args.no_header, intercept, transform)
    doc = {
        "schema": SCHEMA_VERSION,
        "command": "predict",
        "model": result.model.kind,
        "predictions": _predictions(result, rows, args.plug_in),
    }
    _write_atomic(args.out, _dump(doc))
    return EXIT_OK


def _simulate(args) -> int:
    n_total = args.n + args.n_test
    X, y, beta = simulate(args.model, n_total, args.p, args.seed, shape=args.gamma_shape)
    names = ["y"] + [f"x{j}" for j in range(1, args.p)]
    data = np.column_stack([y, X[:, 1:]])
    write_csv(args.out, names, data[: args.n])
    if args.test_out is not None:
        write_csv(args.test_out, names, data[args.n :])
    if args.beta_out is not None:
        write_csv(args.beta_out, ["beta"], beta[:, None])
    return EXIT_OK


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epglm", description="Expectation propagation for Bayesian GLMs."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to a CSV file")
    fit.add_argument("--model", choices=MODEL_KINDS, required=True)
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--response", default="y", help="response column name (default: y)")
    prior = fit.add_mutually_exclusive_group()
    prior.add_argument("--prior-var", type=_positive_float, help=f"nu^2 (default {DEFAULT_PRIOR_VAR:g})")
    prior.add_argument("--prior-var-over-p", type=_positive_float, metavar="C",
                       help="use nu^2 = C/p")
    fit.add_argument("--kernel", choices=("auto", "dense", "lowrank"), default="auto")
    fit.add_argument("--tol", type=_positive_float, default=1e-6)
    fit.add_argument("--relative-tol", action="store_true",
                     help="scale site changes by 1 + |k_i| and 1 + |m_i| before comparing to --tol")
    fit.add_argument("--max-sweeps", type=_positive_int, default=200)
    fit.add_argument("--damping", type=_positive_float, default=1.0)
    fit.add_argument("--standardize", action="store_true")
    fit.add_argument("--intercept", action="store_true", help="prepend a column of ones")
    shape = fit.add_mutually_exclusive_group()
    shape.add_argument("--gamma-shape", type=_positive_float)
    shape.add_argument("--gamma-shape-col")
    fit.add_argument("--poisson-threshold", type=float, default=DEFAULT_POISSON_THRESHOLD)
    fit.add_argument("--full-covariance", action="store_true")
    fit.add_argument("--predict", type=Path, help="CSV of query covariates")
    fit.add_argument("--plug-in", action="store_true",
                     help="logit only: probit-style plug-in predictive probability")
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--state", type=Path, help="also save the fitted state (.npz)")
    fit.add_argument("--csv-summary", type=Path, help="also write column,mean,sd as CSV")
    fit.add_argument("--no-header", action="store_true")

    pred = sub.add_parser("predict", help="predict from a saved fit")
    pred.add_argument("--state", type=Path, required=True)
    pred.add_argument("--predict", type=Path, required=True)
    pred.add_argument("--plug-in", action="store_true")
    pred.add_argument("--out", type=Path, required=True)
    pred.add_argument("--no-header", action="store_true")

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--model", choices=MODEL_KINDS, required=True)
    sim.add_argument("--n", type=_positive_int, required=True)
    sim.add_argument("--p", type=_positive_int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--gamma-shape", type=_positive_float, default=2.0)
    sim.add_argument("--n-test", type=int, default=0)
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--test-out", type=Path)
    sim.add_argument("--beta-out", type=Path)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "fit":
            cfg = RunConfig(
                model=args.model, data=args.data, out=args.out, response=args.response,
                prior_var=args.prior_var, prior_var_over_p=args.prior_var_over_p,
                kernel=args.kernel, tol=args.tol, max_sweeps=args.max_sweeps,
                damping=args.damping, standardize=args.standardize, intercept=args.intercept,
                gamma_shape=args.gamma_shape, gamma_shape_col=args.gamma_shape_col,
                poisson_threshold=args.poisson_threshold,
                full_covariance=args.full_covariance, predict=args.predict,
                state=args.state, csv_summary=args.csv_summary,
                header=not args.no_header, plug_in=args.plug_in,
                relative_tol=args.relative_tol,
            )
            return _fit(cfg)
        if args.command == "predict":
            return _predict(args)
        if args.n_test < 0:
            raise InputError("--n-test must be nonnegative")
        return _simulate(args)
    except (InputError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
