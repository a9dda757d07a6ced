import math

import numpy as np
import pytest

from conftest import make_dataset
from epglm import Dataset, EPConfig, run_ep
from epglm.oracles import BoundaryMassError, grid_posterior, mc_predictive, naive_ep


class TestNaiveEP:
    def test_empty_is_prior(self):
        res = naive_ep(Dataset(np.zeros((0, 2)), [], "logit"), 3.0)
        np.testing.assert_array_equal(res.xi, np.zeros(2))
        np.testing.assert_array_equal(res.omega, 3.0 * np.eye(2))
        assert res.log_ml == 0.0

    def test_matches_dense_probit(self):
        data = make_dataset("probit", 20, 5, seed=0)
        cfg = EPConfig(kernel="dense", tol=1e-10)
        a, b = run_ep(data, 2.0, cfg), naive_ep(data, 2.0, cfg)
        np.testing.assert_allclose(a.xi, b.xi, atol=1e-8)
        np.testing.assert_allclose(a.omega, b.omega, atol=1e-8)
        assert a.log_ml == pytest.approx(b.log_ml, abs=1e-8)

    def test_matches_lowrank_poisson(self):
        data = make_dataset("poisson", 8, 30, seed=1)
        cfg = EPConfig(kernel="lowrank", tol=1e-10)
        a, b = run_ep(data, 1.0, cfg), naive_ep(data, 1.0, cfg)
        np.testing.assert_allclose(a.xi, b.xi, atol=1e-6)
        np.testing.assert_allclose(a.omega, b.omega, atol=1e-6)
        assert a.log_ml == pytest.approx(b.log_ml, abs=1e-6)

    def test_single_site_probit(self):
        res = naive_ep(Dataset(np.ones((1, 1)), [1.0], "probit"), 1.0)
        assert res.xi[0] == pytest.approx(1 / math.sqrt(math.pi), abs=1e-12)
        assert res.log_ml == pytest.approx(math.log(0.5), abs=1e-12)


class TestGridPosterior:
    def test_empty_is_prior(self):
        mean, cov, log_ml = grid_posterior(Dataset(np.zeros((0, 2)), [], "probit"), 1.0, bounds=10.0)
        np.testing.assert_allclose(mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(cov, np.eye(2), atol=1e-6)
        assert abs(log_ml) < 1e-6

    @pytest.mark.parametrize("x", [[0.7], [1.0, -0.4]])
    def test_single_probit_site(self, x):
        data = Dataset(np.array([x]), [1.0], "probit")
        _, _, log_ml = grid_posterior(data, 1.0, bounds=10.0, nodes_per_dim=401)
        assert log_ml == pytest.approx(math.log(0.5), abs=1e-8)

    def test_node_doubling_converges(self):
        data = make_dataset("probit", 15, 2, seed=2, scale=1.0)
        m1, _, _ = grid_posterior(data, 2.0, bounds=10.0, nodes_per_dim=401)
        m2, _, _ = grid_posterior(data, 2.0, bounds=10.0, nodes_per_dim=801)
        np.testing.assert_allclose(m1, m2, atol=1e-6)

    def test_boundary_mass_reported(self):
        with pytest.raises(BoundaryMassError):
            grid_posterior(Dataset(np.zeros((0, 1)), [], "probit"), 4.0, bounds=3.0)

    def test_argument_limits(self):
        with pytest.raises(ValueError):
            grid_posterior(make_dataset("probit", 3, 3, seed=0), 1.0)
        with pytest.raises(ValueError):
            grid_posterior(make_dataset("probit", 3, 1, seed=0), 1.0, nodes_per_dim=2002)


@pytest.fixture(scope="module")
def fit():
    return run_ep(make_dataset("probit", 30, 3, seed=3), 1.0)


class TestMonteCarlo:
    def test_deterministic(self, fit):
        x = np.array([0.3, -0.2, 1.0])
        assert mc_predictive(fit, x, 20_000, seed=4) == mc_predictive(fit, x, 20_000, seed=4)
        assert mc_predictive(fit, x, 20_000, seed=4) != mc_predictive(fit, x, 20_000, seed=5)

    def test_zero_projection(self):
        res = run_ep(Dataset(np.zeros((0, 2)), [], "probit"), 1.0)
        est, se = mc_predictive(res, [1.0, 1.0], draws=100_000, seed=0)
        assert abs(est - 0.5) <= 3 * se

    def test_minimum_draws(self, fit):
        with pytest.raises(ValueError):
            mc_predictive(fit, np.ones(3), draws=9_999)

    def test_custom_functional(self, fit):
        x = np.array([1.0, 0.0, 0.0])
        est, se = mc_predictive(fit, x, 100_000, seed=0, functional=lambda t: t)
        assert abs(est - fit.xi[0]) <= 3 * se

    def test_needs_full_covariance(self):
        res = run_ep(make_dataset("probit", 5, 10, seed=4), 1.0, EPConfig(full_covariance=False))
        with pytest.raises(ValueError):
            mc_predictive(res, np.ones(10), 10_000)
