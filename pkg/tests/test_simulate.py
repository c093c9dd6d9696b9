import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wishart_em.dataset import Dataset, read_dataset, scaled_distances, write_dataset
from wishart_em.errors import DimensionMismatch, DomainError
from wishart_em.simulate import (
    SimConfig,
    exp_correlation,
    sample_correlated_gaussians,
    sample_group_means,
    sample_wishart_process,
    simulate,
    simulate_replication,
    trained_means,
    variogram_constant,
)


def pair_corr(rho):
    return np.array([[1.0, rho], [rho, 1.0]])


def pair_residual_draws(rho, p, M, n, seed):
    """n independent (U_1, U_2) pairs with cross-site correlation rho; (n, 2, p, p)."""
    z = sample_correlated_gaussians(pair_corr(rho), p, M * n, seed).reshape(n, M, 2, p)
    return np.einsum("njta,njtb->ntab", z, z) / M


def mean_sq_distance(rho, p=3, M=5, n=10_000, seed=0):
    u = pair_residual_draws(rho, p, M, n, seed)
    return float(np.mean(np.sum((u[:, 0] - u[:, 1]) ** 2, axis=(1, 2))))


class TestCorrelation:
    @pytest.mark.parametrize("d, phi, expected", [(0, 1, 1.0), (1, 1, np.exp(-1)), (0.5, 0.25, np.exp(-2))])
    def test_values(self, d, phi, expected):
        assert exp_correlation(d, phi) == pytest.approx(expected, rel=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            exp_correlation(1.0, 0.0)
        with pytest.raises(DomainError):
            exp_correlation(-1.0, 1.0)

    def test_scaled_distances(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 2.0]])
        d = scaled_distances(x)
        assert d.max() == 1.0
        np.testing.assert_allclose(d[0], [0, 1, 0.4])


class TestGaussians:
    def test_independent_sites(self):
        z = sample_correlated_gaussians(np.eye(2), 1, 10_000, seed=1)[:, :, 0]
        assert abs(np.corrcoef(z.T)[0, 1]) < 0.05

    def test_correlated_sites(self):
        z = sample_correlated_gaussians(pair_corr(0.8), 3, 10_000, seed=2)
        for c in range(3):
            assert np.corrcoef(z[:, :, c].T)[0, 1] == pytest.approx(0.8, abs=0.05)

    def test_single_site_standard_normal(self):
        z = sample_correlated_gaussians(np.eye(1), 1, 10_000, seed=3)
        assert np.var(z) == pytest.approx(1.0, abs=0.05)

    def test_duplicate_sites_need_jitter(self):
        z = sample_correlated_gaussians(np.ones((3, 3)), 2, 5, seed=4)
        np.testing.assert_allclose(z[:, 0], z[:, 1], atol=1e-4)


class TestWishartProcess:
    def test_mean_is_identity(self):
        u = sample_wishart_process(np.eye(10_000), 2, 5, seed=5)
        np.testing.assert_allclose(u.mean(axis=0), np.eye(2), atol=0.05)

    def test_variogram_constant_values(self):
        assert variogram_constant(3, 5) == pytest.approx(4.8)
        assert variogram_constant(3, 20) == pytest.approx(1.2)

    @pytest.mark.parametrize("rho", [0.0, 0.5])
    def test_variogram_law(self, rho):
        expected = variogram_constant(3, 5) * (1 - rho**2)
        assert mean_sq_distance(rho, seed=6) == pytest.approx(expected, rel=0.05)

    def test_variogram_ratio_constant(self):
        ratios = [mean_sq_distance(r, seed=7) / (1 - r * r) for r in (0.0, 0.3, 0.6, 0.9)]
        np.testing.assert_allclose(ratios, 4.8, rtol=0.05)

    def test_larger_dof_shrinks_variation(self):
        ratio = mean_sq_distance(0.0, M=20, seed=8) / mean_sq_distance(0.0, M=5, seed=9)
        assert ratio == pytest.approx(5 / 20, rel=0.10)

    def test_non_integer_dof_rejected(self):
        with pytest.raises(DomainError):
            sample_wishart_process(np.eye(2), 2, 4.5)


class TestSimulate:
    def test_default_shapes(self):
        out = simulate(SimConfig())
        assert out.matrices.shape == (50, 3, 3)
        assert out.labels.shape == (50,)
        assert out.group_means.shape == (3, 3, 3)
        assert out.covariates.shape == (50, 10)
        assert set(out.labels) <= {1, 2, 3}
        assert all(np.all(np.linalg.eigvalsh(a) > 0) for a in out.matrices)

    def test_single_group(self):
        assert np.all(simulate(SimConfig(K=1, T=10)).labels == 1)

    def test_deterministic(self):
        a, b = simulate(SimConfig(seed=11)), simulate(SimConfig(seed=11))
        for name in ("matrices", "covariates", "labels", "group_means", "residuals"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert not np.array_equal(a.matrices, simulate(SimConfig(seed=12)).matrices)

    def test_marginal_mean_without_correlation(self):
        means = sample_group_means(1, 3, seed=13)
        draws = np.concatenate([simulate(SimConfig(T=500, K=1, phi=1e-6, seed=s), means).matrices
                                for s in range(20)])
        err = np.linalg.norm(draws.mean(axis=0) - means[0]) / np.linalg.norm(means[0])
        assert err < 0.05

    def test_matrices_are_congruent_residuals(self):
        out = simulate(SimConfig(T=8, seed=14))
        low = np.linalg.cholesky(out.group_means[out.labels - 1])
        np.testing.assert_allclose(out.matrices, low @ out.residuals @ np.swapaxes(low, 1, 2), atol=1e-12)

    def test_group_means_well_conditioned(self):
        means = sample_group_means(20, 3, seed=15)
        assert all(np.linalg.cond(s) < 1e6 for s in means)

    @pytest.mark.parametrize("kwargs", [{"M": 1.5}, {"T": 1}, {"weights": (0.5, 0.6, -0.1)}, {"phi": 0.0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises((ValueError, DomainError)):
            simulate(SimConfig(**kwargs))

    def test_non_integer_dof_rejected_by_sampler(self):
        with pytest.raises(DomainError):
            simulate(SimConfig(M=5.5))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(2, 12), st.integers(1, 3), st.integers(0, 1000))
    def test_valid_configs_give_spd(self, T, K, seed):
        out = simulate(SimConfig(T=T, K=K, seed=seed))
        assert all(np.all(np.linalg.eigvalsh(a) > 0) for a in out.matrices)


class TestTrainedMeans:
    def test_single_draw_is_returned(self):
        cfg = SimConfig(K=1)
        means = sample_group_means(1, 3, seed=16)
        got = trained_means(cfg, means, 1, seed=17)
        low = np.linalg.cholesky(means[0])
        u = sample_wishart_process(np.eye(1), 3, 5, np.random.default_rng(17))[0]
        np.testing.assert_allclose(got[0], low @ u @ low.T, atol=1e-12)

    def test_consistent(self):
        cfg = SimConfig()
        means = sample_group_means(3, 3, seed=18)
        got = trained_means(cfg, means, 10_000, seed=19)
        for g, s in zip(got, means):
            assert np.linalg.norm(g - s) / np.linalg.norm(s) < 0.05

    def test_ten_draws_spd(self):
        data = simulate_replication(SimConfig(seed=20))
        assert data.trained_means.shape == (3, 3, 3)
        assert all(np.all(np.linalg.eigvalsh(s) > 0) for s in data.trained_means)


class TestDatasetFiles:
    def test_roundtrip(self, tmp_path):
        data = simulate_replication(SimConfig(T=6, seed=21))
        write_dataset(tmp_path / "d", data)
        back = read_dataset(tmp_path / "d")
        np.testing.assert_array_equal(back.matrices, data.matrices)
        np.testing.assert_array_equal(back.covariates, data.covariates)
        np.testing.assert_array_equal(back.labels, data.labels)
        np.testing.assert_array_equal(back.trained_means, data.trained_means)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / "none")

    def test_mismatched_lengths(self):
        with pytest.raises(DimensionMismatch):
            Dataset(np.tile(np.eye(2), (3, 1, 1)), np.zeros((4, 2)))
