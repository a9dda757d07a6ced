"""CSV ingestion, covariate standardisation and synthetic data generation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .engine import Dataset
from .hybrid import ModelSpec

__all__ = [
    "InputError",
    "EmptyFileError",
    "RaggedRowError",
    "MissingValueError",
    "MalformedNumberError",
    "ResponseDomainError",
    "Table",
    "read_table",
    "load_csv",
    "Standardizer",
    "standardize",
    "simulate",
    "write_csv",
]

MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none", "?"})

Column = Union[str, int]


class InputError(ValueError):
    """Anything wrong with user-supplied data."""


class EmptyFileError(InputError):
    pass


class RaggedRowError(InputError):
    pass


class MissingValueError(InputError):
    pass


class MalformedNumberError(InputError):
    pass


class ResponseDomainError(InputError):
    pass


@dataclass
class Table:
    columns: list[str]
    data: np.ndarray

    def index(self, column: Column) -> int:
        if isinstance(column, int) or (isinstance(column, str) and column.isdigit()
                                       and column not in self.columns):
            j = int(column)
            if not 0 <= j < len(self.columns):
                raise InputError(f"column index {j} out of range (file has {len(self.columns)})")
            return j
        try:
            return self.columns.index(column)
        except ValueError:
            raise InputError(f"no column named {column!r}; available: {self.columns}") from None


def read_table(path: Union[str, Path], header: bool = True) -> Table:
    """Parse a comma-separated numeric file.

    Line numbers in error messages are 1-based and count the header.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = [(reader.line_num, row) for row in reader if row]
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    if header:
        columns = [c.strip() for c in rows[0][1]]
        body = rows[1:]
    else:
        columns = [f"x{j}" for j in range(len(rows[0][1]))]
        body = rows
    if not body:
        raise EmptyFileError(f"{path}: no data rows")
    width = len(columns)
    data = np.empty((len(body), width))
    for r, (line, row) in enumerate(body):
        if len(row) != width:
            raise RaggedRowError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, token in enumerate(row):
            token = token.strip()
            if token.lower() in MISSING_TOKENS:
                raise MissingValueError(
                    f"{path}: missing value at line {line}, column {columns[j]!r}"
                )
            try:
                value = float(token)
            except ValueError:
                raise MalformedNumberError(
                    f"{path}: cannot parse {token!r} as a number at line {line}, "
                    f"column {columns[j]!r}"
                ) from None
            if not math.isfinite(value):
                raise MalformedNumberError(
                    f"{path}: non-finite value {token!r} at line {line}, column {columns[j]!r}"
                )
            data[r, j] = value
    return Table(columns, data)


def load_csv(
    path: Union[str, Path],
    response_column: Column,
    covariate_columns: Optional[Sequence[Column]] = None,
    header: bool = True,
    model: Union[str, ModelSpec] = "probit",
    shape: Optional[float] = None,
    shape_column: Optional[Column] = None,
) -> tuple[Dataset, list[str]]:
    """Read a dataset from CSV.

    Covariates default to every column other than the response (and the
    gamma shape column, if any).

    Returns
    -------
    dataset : Dataset
    names : list of str
        Covariate column names in design-matrix order.
    """
    table = read_table(path, header)
    j_y = table.index(response_column)
    j_shape = table.index(shape_column) if shape_column is not None else None
    if covariate_columns is None:
        cols = [j for j in range(len(table.columns)) if j not in (j_y, j_shape)]
    else:
        cols = [table.index(c) for c in covariate_columns]
    if not cols:
        raise InputError("no covariate columns selected")
    if isinstance(model, str):
        if model == "gamma":
            upsilon = table.data[:, j_shape] if j_shape is not None else shape
            model = ModelSpec("gamma", upsilon)
        else:
            model = ModelSpec(model)
    y = table.data[:, j_y]
    try:
        model.check_responses(y)
    except ValueError as exc:
        raise ResponseDomainError(f"{path}: {exc}") from None
    return Dataset(table.data[:, cols], y, model), [table.columns[j] for j in cols]


@dataclass(frozen=True)
class Standardizer:
    """Column-wise affine map ``(x - center) / scale`` recorded at fit time."""

    center: np.ndarray
    scale: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.center.size:
            raise InputError(f"expected {self.center.size} covariates, got {X.shape[-1]}")
        return (X - self.center) / self.scale

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["center"], dtype=float), np.asarray(d["scale"], dtype=float))


def standardize(
    X,
    intercept: bool = False,
    names: Optional[Sequence[str]] = None,
) -> tuple[np.ndarray, Standardizer]:
    """Centre each covariate and scale it to standard deviation 1/2.

    Uses the sample (``n - 1``) standard deviation. With ``intercept=True``
    the first column must be all ones and passes through unchanged.

    Raises
    ------
    InputError
        On a constant covariate (named in the message) or fewer than two rows.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise InputError("standardisation needs at least two rows")
    names = list(names) if names is not None else [f"column {j}" for j in range(p)]
    center = X.mean(axis=0)
    scale = 2.0 * X.std(axis=0, ddof=1)
    start = 0
    if intercept:
        if not np.all(X[:, 0] == 1.0):
            raise InputError(f"intercept column {names[0]!r} is not all ones")
        center[0], scale[0] = 0.0, 1.0
        start = 1
    for j in range(start, p):
        if not scale[j] > 0.0:
            raise InputError(f"covariate {names[j]!r} is constant and cannot be standardised")
    tr = Standardizer(center, scale)
    return tr.apply(X), tr


def simulate(
    model: str,
    n: int,
    p: int,
    seed: int,
    shape: float = 2.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded synthetic GLM data with an intercept in column 0.

    Binary models: ``p - 1`` standard normal covariates rescaled to mean 0 and
    sd 1/2, coefficients uniform on ``[-1, 1]``. Log-link models: covariates
    centred and divided by ``2 sqrt(p - 1)`` times their sd, so the linear
    predictor's spread does not grow with ``p``; intercept 5 and other
    coefficients uniform on ``[-5, 5]``.

    Returns
    -------
    X : (n, p) array including the intercept column
    y : (n,) responses
    beta : (p,) true coefficients
    """
    ModelSpec(model, shape if model == "gamma" else None)
    if n < 2 or p < 1:
        raise ValueError("simulate needs n >= 2 and p >= 1")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p - 1))
    Z -= Z.mean(axis=0)
    sd = Z.std(axis=0, ddof=1)
    if model in ("probit", "logit"):
        Z /= 2.0 * sd
        beta = rng.uniform(-1.0, 1.0, p)
    else:
        Z /= 2.0 * math.sqrt(max(p - 1, 1)) * sd
        beta = rng.uniform(-5.0, 5.0, p)
        beta[0] = 5.0
    X = np.hstack([np.ones((n, 1)), Z])
    eta = X @ beta
    if model == "probit":
        y = (rng.standard_normal(n) < eta).astype(float)
    elif model == "logit":
        y = (rng.logistic(size=n) < eta).astype(float)
    elif model == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        # mean exp(eta), shape upsilon
        y = rng.gamma(shape, np.exp(eta) / shape)
    return X, y, beta


def write_csv(path: Union[str, Path], columns: Sequence[str], data: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in np.atleast_2d(data):
            w.writerow([repr(float(v)) for v in row])
