import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import beta as beta_dist

from ambitrace.traces import AnnotationTrace, TraceSet
from ambitrace.representations import (
    BETA_MAPPED,
    FitError,
    GAUSSIAN,
    fit_beta,
    fit_gaussian,
    group_ordinal,
    individual_ordinal,
    interval_representation,
    pool_neighbors,
    read_representation,
    write_representation,
)


def make_set(matrix, bounds=None):
    matrix = np.asarray(matrix, dtype=float)
    traces = [AnnotationTrace(f"ann{i}", row, 1.0) for i, row in enumerate(matrix)]
    return TraceSet(traces, window_length=1.0, bounds=bounds)


def beta_loglik_oracle(samples):
    """Generic numerical optimizer fit, independent of the Newton path."""

    def neg_ll(p):
        a, b = np.exp(p)  # enforce positivity via log-parameterization
        return -np.sum(beta_dist.logpdf(samples, a, b))

    res = minimize(neg_ll, x0=[0.0, 0.0], method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    return np.exp(res.x)


class TestPoolNeighbors:
    def test_radius_zero_is_window_column(self):
        ts = make_set(np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(pool_neighbors(ts, 2, 0), [2.0, 6.0, 10.0])

    def test_interior_count_with_six_annotators(self):
        ts = make_set(np.random.default_rng(0).normal(size=(6, 5)))
        assert len(pool_neighbors(ts, 2, 1)) == 18

    def test_boundary_truncates(self):
        ts = make_set(np.random.default_rng(0).normal(size=(6, 5)))
        assert len(pool_neighbors(ts, 0, 1)) == 12

    def test_out_of_range(self):
        ts = make_set(np.zeros((2, 4)))
        with pytest.raises(IndexError):
            pool_neighbors(ts, 4, 1)


class TestGaussianFit:
    def test_closed_form(self):
        d = fit_gaussian([1, 2, 3])
        assert d.mu == pytest.approx(2.0)
        assert d.sigma == pytest.approx(np.sqrt(2.0 / 3.0))
        assert d.family == GAUSSIAN

    def test_degenerate_constant_allowed(self):
        d = fit_gaussian([4.0, 4.0, 4.0])
        assert (d.mu, d.sigma) == (4.0, 0.0)

    def test_symmetric_mean_zero(self):
        d = fit_gaussian([-2.0, -0.5, 0.5, 2.0])
        assert abs(d.mu) < 1e-12

    def test_shift_and_scale_equivariance(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.normal(size=30)
            c, a = rng.normal(), abs(rng.normal()) + 0.1
            base = fit_gaussian(x)
            shifted = fit_gaussian(x + c)
            scaled = fit_gaussian(a * x)
            assert shifted.mu == pytest.approx(base.mu + c, abs=1e-12)
            assert shifted.sigma == pytest.approx(base.sigma, abs=1e-12)
            assert scaled.mu == pytest.approx(a * base.mu, abs=1e-12)
            assert scaled.sigma == pytest.approx(a * base.sigma, abs=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(FitError):
            fit_gaussian([1.0])


class TestBetaFit:
    @pytest.mark.parametrize("a,b", [(2.0, 5.0), (0.8, 0.8), (6.0, 2.0)])
    def test_recovers_parameters_and_matches_oracle(self, a, b):
        rng = np.random.default_rng(int(a * 10 + b))
        samples = rng.beta(a, b, size=10_000)
        fit = fit_beta(samples, (0.0, 1.0))
        fa, fb = fit.beta_params
        assert fa == pytest.approx(a, rel=0.05)
        assert fb == pytest.approx(b, rel=0.05)
        oa, ob = beta_loglik_oracle(np.clip(samples, 1e-6, 1 - 1e-6))
        assert fa == pytest.approx(oa, rel=1e-3)
        assert fb == pytest.approx(ob, rel=1e-3)

    def test_moments_close_to_sample_moments(self):
        rng = np.random.default_rng(9)
        for a, b in [(2.0, 5.0), (1.5, 1.5), (8.0, 3.0)]:
            samples = rng.beta(a, b, size=10_000)
            fit = fit_beta(samples, (0.0, 1.0))
            assert fit.mu == pytest.approx(samples.mean(), rel=0.02)
            assert fit.sigma == pytest.approx(samples.std(), rel=0.02)

    def test_symmetric_samples_give_alpha_near_beta(self):
        rng = np.random.default_rng(5)
        x = rng.beta(3.0, 3.0, size=5000)
        x = np.concatenate([x, 1.0 - x])  # force exact symmetry about 0.5
        fit = fit_beta(x, (0.0, 1.0))
        fa, fb = fit.beta_params
        assert fa == pytest.approx(fb, rel=1e-6)
        assert fit.mu == pytest.approx(0.5, abs=1e-9)

    def test_mapped_units(self):
        rng = np.random.default_rng(6)
        u = rng.beta(2.0, 2.0, size=2000)
        fit = fit_beta(2.0 * u - 1.0, (-1.0, 1.0))
        assert -1.0 < fit.mu < 1.0
        assert fit.family == BETA_MAPPED
        assert fit.mu == pytest.approx(2.0 * u.mean() - 1.0, abs=0.01)

    def test_boundary_sample_is_clamped(self):
        fit = fit_beta([0.0, 0.2, 0.5, 0.9], (0.0, 1.0))
        assert fit.beta_params[0] > 0

    def test_identical_after_clamp_errors(self):
        with pytest.raises(FitError):
            fit_beta([0.3, 0.3, 0.3], (0.0, 1.0))

    def test_out_of_bounds_errors(self):
        with pytest.raises(FitError):
            fit_beta([0.2, 1.4], (0.0, 1.0))


class TestIntervalRepresentation:
    def test_constant_traces(self):
        ts = make_set(np.full((3, 6), 0.7))
        rep = interval_representation(ts, GAUSSIAN, neighbor_radius=1)
        np.testing.assert_allclose(rep.mu, 0.7, atol=1e-12)
        np.testing.assert_allclose(rep.sigma, 0.0, atol=1e-12)

    def test_mirrored_annotators_mu_zero(self):
        rng = np.random.default_rng(7)
        row = rng.uniform(-0.9, 0.9, size=8)
        ts = make_set(np.stack([row, -row]), bounds=(-1.0, 1.0))
        rep = interval_representation(ts, GAUSSIAN, neighbor_radius=1)
        np.testing.assert_allclose(rep.mu, 0.0, atol=1e-12)

    def test_radius_zero_matches_plain_gaussian_fit(self):
        rng = np.random.default_rng(8)
        matrix = rng.normal(size=(5, 4))
        ts = make_set(matrix)
        rep = interval_representation(ts, GAUSSIAN, neighbor_radius=0)
        for n in range(4):
            direct = fit_gaussian(matrix[:, n])
            assert rep.params[n].mu == direct.mu
            assert rep.params[n].sigma == direct.sigma

    def test_beta_requires_bounds(self):
        ts = make_set(np.random.default_rng(0).uniform(0, 1, size=(3, 4)))
        with pytest.raises(ValueError):
            interval_representation(ts, BETA_MAPPED, neighbor_radius=1)

    def test_fit_error_names_window(self):
        ts = make_set(np.zeros((3, 4)), bounds=(-1.0, 1.0))
        with pytest.raises(FitError, match="window 0"):
            interval_representation(ts, BETA_MAPPED, neighbor_radius=1)


class TestIndividualOrdinal:
    def test_constant_offsets_vanish(self):
        trend = np.sin(np.linspace(0, 3, 10))
        matrix = np.stack([trend + off for off in (-0.4, 0.0, 0.3)])
        rep = individual_ordinal(make_set(matrix), neighbor_radius=0)
        np.testing.assert_allclose(rep.sigma, 0.0, atol=1e-12)

    def test_all_constant(self):
        rep = individual_ordinal(make_set(np.full((2, 5), 1.2)), neighbor_radius=1)
        np.testing.assert_allclose(rep.mu, 0.0, atol=1e-12)
        np.testing.assert_allclose(rep.sigma, 0.0, atol=1e-12)

    def test_opposite_slopes_give_positive_sigma(self):
        # two annotators, equal values at even steps, opposite slopes
        matrix = np.array([[0.0, 1.0, 0.0, 1.0], [0.0, -1.0, 0.0, -1.0]])
        rep = individual_ordinal(make_set(matrix), neighbor_radius=0)
        # hand evaluation: per-annotator central differences are
        # [1,0,0,1] and [-1,0,0,-1]; their per-window population stds:
        np.testing.assert_allclose(rep.mu, 0.0, atol=1e-12)
        np.testing.assert_allclose(rep.sigma, [1.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_needs_two_windows(self):
        with pytest.raises(ValueError):
            individual_ordinal(make_set(np.ones((2, 1))))


class TestGroupOrdinal:
    def test_constant_params_zero_gradients(self):
        rep = interval_representation(make_set(np.full((3, 5), 0.2)), GAUSSIAN, 1)
        g = group_ordinal(rep)
        np.testing.assert_allclose(g.dmu, 0.0, atol=1e-12)
        np.testing.assert_allclose(g.dsigma, 0.0, atol=1e-12)

    def test_affine_mu_constant_slope(self):
        base = np.linspace(0.0, 1.0, 6)
        ts = make_set(np.stack([base, base + 0.2]))
        g = group_ordinal(interval_representation(ts, GAUSSIAN, 0))
        np.testing.assert_allclose(g.dmu, base[1] - base[0], atol=1e-12)

    def test_hand_case(self):
        mu = np.array([0.0, 0.2, 0.1, 0.4])
        matrix = np.stack([mu, mu])  # identical annotators: interval mu == mu
        g = group_ordinal(interval_representation(make_set(matrix), GAUSSIAN, 0))
        np.testing.assert_allclose(g.dmu, [0.2, 0.05, 0.1, 0.3], atol=1e-12)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        ts = make_set(rng.normal(size=(4, 6)))
        rep = interval_representation(ts, GAUSSIAN, 1)
        path = tmp_path / "rep.csv"
        write_representation(rep, path, source_hash="abc123")
        meta, cols = read_representation(path)
        assert meta["representation"] == "I"
        assert meta["source_hash"] == "abc123"
        np.testing.assert_array_equal(cols["mu"], rep.mu)
        np.testing.assert_array_equal(cols["sigma"], rep.sigma)

    def test_group_columns(self, tmp_path):
        ts = make_set(np.random.default_rng(12).normal(size=(3, 5)))
        g = group_ordinal(interval_representation(ts, GAUSSIAN, 1))
        path = tmp_path / "group.csv"
        write_representation(g, path)
        meta, cols = read_representation(path)
        assert meta["representation"] == "O_G"
        assert set(cols) == {"window_index", "dmu", "dsigma"}
