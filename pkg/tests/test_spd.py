import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wishart_em import spd
from wishart_em.errors import DimensionMismatch, NotPositiveDefinite


def random_spd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    vals = np.geomspace(1.0, 1.0 / cond, p)
    return (q * vals) @ q.T


class TestCholesky:
    def test_reconstructs(self):
        rng = np.random.default_rng(0)
        a = random_spd(rng, 4)
        low = spd.cholesky(a)
        np.testing.assert_allclose(low @ low.T, a, atol=1e-13)
        assert np.allclose(low, np.tril(low))

    def test_singular_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            spd.cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_tiny_pivot_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            spd.cholesky(np.diag([1.0, 1e-15]))

    def test_nonsquare(self):
        with pytest.raises(DimensionMismatch):
            spd.cholesky(np.ones((2, 3)))

    def test_as_spd_symmetrizes_small_asymmetry(self):
        a = np.array([[2.0, 0.5 + 1e-9], [0.5, 1.0]])
        out = spd.as_spd(a)
        np.testing.assert_array_equal(out, out.T)

    def test_as_spd_rejects_asymmetric(self):
        with pytest.raises(NotPositiveDefinite):
            spd.as_spd(np.array([[2.0, 1.0], [0.0, 1.0]]))


class TestEigensystem:
    def test_descending_and_orthonormal(self):
        rng = np.random.default_rng(1)
        a = random_spd(rng, 5)
        vals, vecs = spd.eigensystem(a)
        assert np.all(np.diff(vals) <= 0)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(5), atol=1e-12)
        np.testing.assert_allclose((vecs * vals) @ vecs.T, a, atol=1e-12)

    def test_identity_keeps_basis(self):
        vals, vecs = spd.eigensystem(np.eye(3))
        np.testing.assert_array_equal(vals, np.ones(3))
        np.testing.assert_allclose(np.abs(vecs), np.eye(3))


class TestFunctions:
    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(2)
        a = random_spd(rng, 3, cond=100.0)
        np.testing.assert_allclose(spd.matrix_exp(spd.matrix_log(a)), a, atol=1e-12)

    def test_log_of_identity(self):
        np.testing.assert_allclose(spd.matrix_log(np.eye(3)), np.zeros((3, 3)), atol=1e-15)

    def test_log_det(self):
        rng = np.random.default_rng(3)
        a = random_spd(rng, 4)
        np.testing.assert_allclose(spd.log_det(a), np.linalg.slogdet(a)[1], atol=1e-12)

    def test_frobenius(self):
        assert spd.frobenius_sq(np.eye(2), np.zeros((2, 2))) == 2.0
        with pytest.raises(DimensionMismatch):
            spd.frobenius_sq(np.eye(2), np.eye(3))

    def test_distance(self):
        assert spd.euclidean_distance([0, 0], [3, 4]) == 5.0
        with pytest.raises(DimensionMismatch):
            spd.euclidean_distance([0, 0], [1, 2, 3])

    def test_congruence_inverse(self):
        rng = np.random.default_rng(4)
        s = random_spd(rng, 3)
        a = random_spd(rng, 3)
        low = spd.cholesky(s)
        u = spd.congruence_inverse(low, a)
        np.testing.assert_allclose(low @ u @ low.T, a, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
    def test_gram_plus_ridge_is_spd(self, m):
        a = m @ m.T + 0.1 * np.eye(3)
        assert spd.is_spd(a)
        assert spd.log_det(a) > 3 * np.log(0.1) - 1e-9


class TestSerialization:
    def test_csv_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        mats = [random_spd(rng, 3) for _ in range(4)]
        spd.write_spd_csv(tmp_path / "m.csv", mats)
        back = spd.read_spd_csv(tmp_path / "m.csv")
        for a, b in zip(mats, back):
            np.testing.assert_array_equal(spd.symmetrize(a), b)

    def test_json_roundtrip(self, tmp_path):
        mats = [np.eye(2), np.diag([2.0, 3.0])]
        spd.write_spd_json(tmp_path / "m.json", mats)
        back = spd.read_spd_json(tmp_path / "m.json")
        np.testing.assert_array_equal(back[1], mats[1])

    def test_csv_rejects_ragged(self, tmp_path):
        (tmp_path / "bad.csv").write_text("1,0\n0,1\n1,0\n")
        with pytest.raises(DimensionMismatch):
            spd.read_spd_csv(tmp_path / "bad.csv")

    def test_csv_rejects_indefinite(self, tmp_path):
        (tmp_path / "bad.csv").write_text("1,2\n2,1\n")
        with pytest.raises(NotPositiveDefinite):
            spd.read_spd_csv(tmp_path / "bad.csv")
