import numpy as np
import pytest
from scipy import stats

from robscatter.baselines import (
    DEPTH_BETA,
    BaselineError,
    DepthConfig1D,
    depth_1d,
    kendall_tau_matrix,
    sample_covariance,
    scaled_kendall_tau,
    tyler_fixed_point_map,
    tyler_m,
    TylerConfig,
)
from robscatter.distributions import (
    ContaminationScenario,
    Gaussian,
    Rng,
    sample_contaminated,
    sample_gaussian,
)
from robscatter.linalg import operator_norm


def _gauss(seed, cov, n):
    cov = np.atleast_2d(cov)
    return sample_gaussian(Rng(seed), np.zeros(cov.shape[0]), cov, n)


class TestTyler:
    def test_clean_identity(self):
        x = _gauss(0, np.eye(5), 5000)
        assert operator_norm(tyler_m(x) - np.eye(5)) <= 0.15

    def test_scale_invariance(self):
        x = _gauss(1, np.diag([3.0, 1.0, 0.5]), 800)
        np.testing.assert_allclose(tyler_m(10 * x), tyler_m(x), atol=1e-10)

    def test_one_dimensional(self):
        x = _gauss(2, np.eye(1), 50)
        np.testing.assert_allclose(tyler_m(x), [[1.0]])

    def test_trace_and_fixed_point_residual(self):
        x = _gauss(3, np.array([[2.0, 0.6], [0.6, 1.0]]), 3000)
        cfg = TylerConfig(tol=1e-10, max_iter=500)
        s = tyler_m(x, cfg)
        assert np.trace(s) == pytest.approx(2.0)
        t = tyler_fixed_point_map(x, s)
        t *= 2.0 / np.trace(t)
        assert np.linalg.norm(t - s) / np.linalg.norm(s) <= 10 * cfg.tol

    def test_zero_rows_dropped(self):
        x = _gauss(4, np.eye(3), 300)
        x2 = np.vstack([x, np.zeros((5, 3))])
        np.testing.assert_allclose(tyler_m(x2), tyler_m(x))

    def test_needs_more_rows(self):
        with pytest.raises(BaselineError):
            tyler_m(np.ones((3, 3)))


class TestKendall:
    def test_concordant(self):
        t = np.arange(10.0)
        x = np.column_stack([t, 2 * t + 1])
        tau = kendall_tau_matrix(x)
        np.testing.assert_allclose(tau, 1.0)
        k = np.sin(np.pi * tau / 2)
        assert k[0, 1] == pytest.approx(1.0)

    def test_matches_scipy_tau(self):
        x = _gauss(5, np.array([[1.0, 0.5], [0.5, 1.0]]), 300)
        tau = kendall_tau_matrix(x)
        ref = stats.kendalltau(x[:, 0], x[:, 1]).statistic  # tau-b equals tau-a without ties
        assert tau[0, 1] == pytest.approx(ref, abs=1e-12)

    def test_bounds_and_unit_diagonal(self):
        x = _gauss(6, np.eye(4), 200)
        tau = kendall_tau_matrix(x)
        assert np.all(np.abs(tau) <= 1)
        np.testing.assert_allclose(np.diag(np.sin(np.pi * tau / 2)), 1.0)

    def test_correlation_part_rank_invariant(self):
        x = _gauss(7, np.array([[1.0, 0.3], [0.3, 2.0]]), 400)
        np.testing.assert_array_equal(kendall_tau_matrix(x), kendall_tau_matrix(x**3))

    def test_clean_diag(self):
        cov = np.diag([4.0, 1.0])
        assert operator_norm(scaled_kendall_tau(_gauss(8, cov, 5000)) - cov) <= 0.3

    def test_pair_budget_subsample(self):
        x = _gauss(9, np.eye(3), 1000)
        full = scaled_kendall_tau(x)
        sub = scaled_kendall_tau(x, Rng(1), pair_budget=100_000)
        assert operator_norm(full - sub) <= 0.1

    def test_contaminated_magnitude(self):
        # order-of-magnitude check against the reported large-n value of about 8.1
        p = 10
        sc = ContaminationScenario(Gaussian(np.zeros(p), np.eye(p)), Gaussian(5 * np.ones(p), 5 * np.eye(p)), 0.2)
        x, _ = sample_contaminated(Rng(0), sc, 5000)
        err = operator_norm(scaled_kendall_tau(x, Rng(1)) - np.eye(p))
        assert 8.1 * 0.5 <= err <= 8.1 * 1.5

    def test_needs_two(self):
        with pytest.raises(BaselineError):
            scaled_kendall_tau(np.ones((1, 3)))


class TestSampleCovariance:
    def test_two_points(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_allclose(sample_covariance(np.vstack([v, -v])), np.outer(v, v))

    def test_clean(self):
        assert operator_norm(sample_covariance(_gauss(0, np.eye(5), 5000)) - np.eye(5)) <= 0.15

    def test_constant(self):
        np.testing.assert_array_equal(sample_covariance(np.ones((5, 2))), 0.0)


class TestDepth:
    def test_beta_constant(self):
        assert DEPTH_BETA == pytest.approx(0.45494, abs=1e-5)
        assert stats.norm.cdf(np.sqrt(DEPTH_BETA)) == pytest.approx(0.75)

    def test_minimizer_matches_closed_form(self):
        x = np.sqrt(2.5) * Rng(0).normal(10_000)
        cfg = DepthConfig1D()
        g, prof = depth_1d(x, cfg)
        step = cfg.grid[1] - cfg.grid[0]
        assert abs(g - np.median(x**2) / DEPTH_BETA) <= step
        assert np.all(prof >= 0.5 - 1 / len(x)) and np.all(prof <= 1)

    def test_two_points(self):
        # an atom at x^2 = 1 is only resolved by a grid point at 1/beta
        grid = np.sort(np.append(np.linspace(0.05, 10.0, 2000), 1.0 / DEPTH_BETA))
        g, prof = depth_1d(np.array([-1.0, 1.0] * 50), DepthConfig1D(grid=grid))
        assert DEPTH_BETA * g == pytest.approx(1.0)
        assert prof.min() == 0.0

    def test_bad_grid(self):
        with pytest.raises(BaselineError):
            DepthConfig1D(grid=np.array([-1.0, 1.0]))
