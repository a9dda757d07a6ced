import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from epglm import Dataset, EPConfig, ModelSpec, run_ep
from epglm.oracles import mc_predictive
from epglm.prediction import (
    PREDICTION_METHODS,
    predict,
    predict_log_link_mean,
    predict_logit,
    predict_probit,
    quad_form,
)

PHI_ONE = 0.8413447460685429
EXP_07 = 2.0137527074704766


def prior_fit(kind, nu2, xi):
    """Fit on no data, then pin the mean so (x'xi, u) are chosen by hand."""
    p = len(xi)
    model = ModelSpec(kind, 2.0) if kind == "gamma" else ModelSpec(kind)
    res = run_ep(Dataset(np.zeros((0, p)), [], model), nu2)
    return dataclasses.replace(res, xi=np.asarray(xi, dtype=float))


@pytest.fixture(scope="module")
def probit_fits():
    data = make_dataset("probit", 25, 9, seed=21)
    return (
        run_ep(data, 2.0, EPConfig(kernel="dense", tol=1e-10)),
        run_ep(data, 2.0, EPConfig(kernel="lowrank", tol=1e-10)),
    )


class TestQuadForm:
    @pytest.mark.parametrize("kernel", ["dense", "lowrank"])
    def test_prior(self, kernel):
        X = np.random.default_rng(0).normal(size=(4, 3))
        res = run_ep(make_dataset("probit", 4, 3, seed=0), 1.5, EPConfig(kernel=kernel, max_sweeps=1))
        res.state.k[:] = 0.0
        if kernel == "dense":
            res.state.omega = np.asfortranarray(1.5 * np.eye(3))
        else:
            res.state.V = np.asfortranarray(1.5 * res.state.X.T)
        x = X[0]
        assert quad_form(res, x) == pytest.approx(1.5 * x @ x, rel=1e-14)

    def test_lowrank_matches_dense(self, probit_fits):
        dense, low = probit_fits
        assert low.kernel == "lowrank"
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=9)
            assert quad_form(low, x) == pytest.approx(float(x @ dense.omega @ x), abs=1e-10)
            assert quad_form(dense, x) == pytest.approx(float(x @ dense.omega @ x), abs=1e-12)

    def test_positive(self):
        res = run_ep(make_dataset("probit", 40, 60, seed=2), 1.0)
        rng = np.random.default_rng(3)
        assert all(quad_form(res, rng.normal(size=60)) > 0 for _ in range(1000))

    def test_accepts_state(self, probit_fits):
        _, low = probit_fits
        x = np.arange(9.0)
        assert quad_form(low.state, x) == quad_form(low, x)

    @pytest.mark.parametrize("x", [np.ones(8), np.array([np.nan] * 9)])
    def test_rejects_bad_query(self, probit_fits, x):
        with pytest.raises(ValueError):
            quad_form(probit_fits[0], x)


class TestPredictProbit:
    def test_zero_projection(self):
        assert predict_probit(prior_fit("probit", 3.0, [0.0, 0.0]), [1.0, -2.0]) == 0.5

    def test_hand_value(self):
        assert predict_probit(prior_fit("probit", 0.44, [1.2]), [1.0]) == pytest.approx(PHI_ONE, abs=1e-14)

    def test_monotone_in_projection(self):
        vals = [predict_probit(prior_fit("probit", 0.8, [m]), [1.0]) for m in np.linspace(-5, 5, 41)]
        assert np.all(np.diff(vals) > 0)
        assert all(0 < v < 1 for v in vals)

    def test_kernel_invariance(self, probit_fits):
        dense, low = probit_fits
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.normal(size=9)
            assert predict_probit(dense, x) == pytest.approx(predict_probit(low, x), abs=1e-8)

    def test_rejects_other_models(self):
        with pytest.raises(ValueError):
            predict_probit(prior_fit("poisson", 1.0, [0.0]), [1.0])
        with pytest.raises(ValueError):
            predict_probit(prior_fit("logit", 1.0, [0.0]), [1.0])

    def test_logit_plug_in(self):
        fit = prior_fit("logit", 0.5, [1.0])
        expected = 0.5 * math.erfc(-1.0 / math.sqrt(8 / math.pi + 0.5) / math.sqrt(2))
        assert predict_probit(fit, [1.0], plug_in=True) == pytest.approx(expected, rel=1e-14)

    def test_matches_monte_carlo(self, probit_fits):
        dense, _ = probit_fits
        rng = np.random.default_rng(5)
        for seed in range(5):
            x = rng.normal(size=9)
            est, se = mc_predictive(dense, x, draws=200_000, seed=seed)
            assert abs(predict_probit(dense, x) - est) <= 3 * se


class TestPredictLogit:
    def test_default_formula(self):
        fit = prior_fit("logit", 0.6, [0.9])
        expected = 1 / (1 + math.exp(-0.9 / math.sqrt(1 + 0.6 * math.pi / 8)))
        assert predict_logit(fit, [1.0]) == pytest.approx(expected, rel=1e-14)

    def test_close_to_monte_carlo(self):
        res = run_ep(make_dataset("logit", 60, 4, seed=6), 2.0)
        x = np.array([0.5, -1.0, 0.3, 0.8])
        est, _ = mc_predictive(res, x, draws=200_000, seed=1)
        # approximation, not exact: a loose band only
        assert abs(predict_logit(res, x) - est) < 0.01

    def test_rejects_probit(self):
        with pytest.raises(ValueError):
            predict_logit(prior_fit("probit", 1.0, [0.0]), [1.0])

    def test_methods_are_labelled(self):
        assert PREDICTION_METHODS["logit"].startswith("approximate")
        assert PREDICTION_METHODS["probit"].startswith("exact")


class TestPredictLogLinkMean:
    def test_prior_centre(self):
        fit = prior_fit("poisson", 1.0, [0.0])
        assert predict_log_link_mean(fit, [0.0]) == 1.0

    def test_hand_value(self):
        fit = prior_fit("gamma", 0.8, [0.3])
        assert predict_log_link_mean(fit, [1.0]) == pytest.approx(EXP_07, rel=1e-14)

    def test_rejects_binary(self):
        with pytest.raises(ValueError):
            predict_log_link_mean(prior_fit("logit", 1.0, [0.0]), [1.0])

    @pytest.mark.parametrize("kind", ["poisson", "gamma"])
    def test_kernel_invariance_and_jensen(self, kind):
        data = make_dataset(kind, 20, 12, seed=7)
        a = run_ep(data, 1.0, EPConfig(kernel="dense", tol=1e-10))
        b = run_ep(data, 1.0, EPConfig(kernel="lowrank", tol=1e-10))
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.normal(size=12)
            pa, pb = predict_log_link_mean(a, x), predict_log_link_mean(b, x)
            assert pa == pytest.approx(pb, rel=1e-8)
            assert pa >= math.exp(x @ a.xi)

    def test_matches_monte_carlo(self):
        res = run_ep(make_dataset("poisson", 40, 3, seed=9), 1.0)
        rng = np.random.default_rng(10)
        for seed in range(5):
            x = rng.normal(size=3)
            est, se = mc_predictive(res, x, draws=200_000, seed=seed)
            assert abs(predict_log_link_mean(res, x) - est) <= 3 * se


class TestPredictBatch:
    def test_rowwise(self, probit_fits):
        dense, _ = probit_fits
        rows = np.random.default_rng(11).normal(size=(7, 9))
        np.testing.assert_array_equal(predict(dense, rows), [predict_probit(dense, r) for r in rows])

    def test_logit_switch(self):
        fit = prior_fit("logit", 0.5, [1.0])
        assert predict(fit, [[1.0]])[0] == predict_logit(fit, [1.0])
        assert predict(fit, [[1.0]], plug_in=True)[0] == predict_probit(fit, [1.0], plug_in=True)

    def test_empty(self, probit_fits):
        assert predict(probit_fits[0], np.zeros((0, 9))).shape == (0,)


@settings(max_examples=50, deadline=None)
@given(m=st.floats(-20, 20), u=st.floats(0.0, 50.0))
def test_probit_strictly_inside_unit_interval(m, u):
    nu2 = max(u, 1e-12)
    p = predict_probit(prior_fit("probit", nu2, [m]), [1.0])
    assert 0.0 <= p <= 1.0
    if abs(m) / math.sqrt(1 + nu2) < 8:
        assert 0.0 < p < 1.0
