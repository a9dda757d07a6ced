import numpy as np
import pytest

from epglm import Dataset, ModelSpec
from epglm.hybrid import CavityProjection

KINDS = ("probit", "logit", "poisson", "gamma")


def make_dataset(kind, n, p, seed, scale=0.5, shape=2.0):
    """Small synthetic GLM dataset with moderate signal."""
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=scale, size=(n, p))
    beta = rng.uniform(-1.0, 1.0, size=p)
    eta = X @ beta
    if kind == "probit":
        y = (rng.standard_normal(n) < eta).astype(float)
    elif kind == "logit":
        y = (rng.logistic(size=n) < eta).astype(float)
    elif kind == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        y = rng.gamma(shape, np.exp(eta) / shape)
    model = ModelSpec(kind, shape) if kind == "gamma" else ModelSpec(kind)
    return Dataset(X, y, model)


def finite_difference_residuals(fn, cav, h=1e-5):
    """Theta and d log Z / d rho2 minus central differences of log Z."""
    lam, rho2 = cav
    t = fn(cav)
    d_lam = (fn(CavityProjection(lam + h, rho2)).log_z - fn(CavityProjection(lam - h, rho2)).log_z) / (2 * h)
    d_rho2 = (fn(CavityProjection(lam, rho2 + h)).log_z - fn(CavityProjection(lam, rho2 - h)).log_z) / (2 * h)
    return t.theta - d_lam, 0.5 * (t.delta + t.theta**2) - d_rho2


def second_difference_residual(fn, cav, h=1e-4):
    """Delta minus d^2 log Z / d lam^2 by central differences."""
    lam, rho2 = cav
    f = lambda l: fn(CavityProjection(l, rho2)).log_z
    d2 = (f(lam + h) - 2 * f(lam) + f(lam - h)) / h**2
    return fn(cav).delta - d2


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# one PASS/FAIL line per acceptance criterion, printed after the run
_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            status = "FAIL (recorded as strict xfail: " + report.wasxfail + ")"
        else:
            status = "PASS" if report.passed else "FAIL"
        _CRITERIA.append((mark.args[0], mark.args[1], status))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, status in sorted(_CRITERIA, key=lambda c: (c[0], c[1])):
        terminalreporter.write_line(f"criterion {number} [{label}]: {status}")
