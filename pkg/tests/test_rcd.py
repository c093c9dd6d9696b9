import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wishart_em import rcd
from wishart_em.baselines import log_euclidean_classify, rand_index
from wishart_em.errors import DegenerateFeatures, ImageFormatError, MaskTooSmall, ZeroBlueVariance


def random_image(seed, h=6, w=7):
    return np.random.default_rng(seed).random((h, w, 3))


class TestFeatures:
    def test_constant_gray_gives_identical_rows(self):
        img = np.full((2, 2, 3), 0.5)
        f = rcd.extract_features(img)
        assert f.shape == (4, 3)
        np.testing.assert_array_equal(f, np.full((4, 3), 0.5))

    def test_mask_selects_rows(self):
        img = random_image(0, 2, 2)
        mask = np.array([[True, True], [True, False]])
        f = rcd.extract_features(img, mask=mask)
        assert f.shape == (3, 3)
        np.testing.assert_array_equal(f, img[mask])

    def test_checkerboard_red_alternates(self):
        img = np.zeros((2, 4, 3))
        img[::2, ::2, 0] = 1.0
        img[1::2, 1::2, 0] = 1.0
        red = rcd.extract_features(img)[:, 0]
        np.testing.assert_array_equal(red, [1, 0, 1, 0, 0, 1, 0, 1])

    def test_custom_feature_map(self):
        img = random_image(1, 3, 3)
        fmap = rcd.FeatureMap(names=("x", "R"), functions=[lambda im, ys, xs: xs, lambda im, ys, xs: im[ys, xs, 0]])
        f = rcd.extract_features(img, fmap)
        assert fmap.dim == 2 and f.shape == (9, 2)
        np.testing.assert_array_equal(f[:3, 0], [0, 1, 2])

    def test_small_mask_rejected(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        with pytest.raises(MaskTooSmall):
            rcd.extract_features(random_image(2, 3, 3), mask=mask)

    @pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.zeros((2, 2, 4)), np.full((2, 2, 3), 1.5),
                                     np.full((2, 2, 3), np.nan)])
    def test_invalid_images(self, bad):
        with pytest.raises(ImageFormatError):
            rcd.validate_image(bad)


class TestRegionCovariance:
    def test_rank_deficient_pair_gets_jitter(self):
        cov = rcd.region_covariance(np.array([[0.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_allclose(cov, 0.5 + rcd.JITTER * np.eye(2), rtol=0, atol=1e-16)
        np.testing.assert_array_equal(cov, cov.T)

    def test_standard_normal_rows(self):
        rows = np.random.default_rng(3).standard_normal((100_000, 3))
        np.testing.assert_allclose(rcd.region_covariance(rows), np.eye(3), atol=0.02)

    def test_constant_rows_degenerate(self):
        with pytest.raises(DegenerateFeatures):
            rcd.region_covariance(np.ones((5, 3)))

    def test_uses_n_minus_one(self):
        rows = np.random.default_rng(4).random((7, 3))
        np.testing.assert_allclose(rcd.region_covariance(rows), np.cov(rows.T, ddof=1), atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 20))
    def test_output_symmetric_spd(self, seed, n):
        rows = np.random.default_rng(seed).random((n, 3))
        try:
            cov = rcd.region_covariance(rows)
        except DegenerateFeatures:
            return
        np.testing.assert_array_equal(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestPipeline:
    @pytest.mark.parametrize("seed", range(5))
    def test_blue_entry_is_one(self, seed):
        assert abs(rcd.rcd_pipeline(random_image(seed))[2, 2] - 1.0) < 1e-10

    def test_blue_equal_red(self):
        img = random_image(5)
        img[..., 2] = img[..., 0]
        desc = rcd.rcd_pipeline(img)
        np.testing.assert_allclose([desc[0, 0], desc[2, 2], desc[0, 2]], 1.0, atol=1e-10)

    def test_scale_invariance(self):
        img = random_image(6) * 0.5
        np.testing.assert_allclose(rcd.rcd_pipeline(img * 1.7), rcd.rcd_pipeline(img), atol=1e-10)

    def test_masked_out_voxel_ignored(self):
        img = random_image(7)
        mask = np.ones(img.shape[:2], dtype=bool)
        mask[0, 0] = False
        base = rcd.rcd_pipeline(img, mask)
        img2 = img.copy()
        img2[0, 0] = [0.0, 1.0, 0.3]
        np.testing.assert_array_equal(rcd.rcd_pipeline(img2, mask), base)

    def test_flat_blue_rejected(self):
        img = random_image(8)
        img[..., 2] = 0.4
        with pytest.raises(ZeroBlueVariance):
            rcd.rcd_pipeline(img)

    def test_blue_scale_is_std(self):
        img = random_image(9)
        assert rcd.blue_scale(img) == pytest.approx(np.std(img[..., 2], ddof=1))

    def test_two_class_corpus_separates(self):
        rng = np.random.default_rng(10)
        mixes = [np.array([[1.0, 0.9, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 1.0]]),
                 np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.9, 0.0, 0.4]])]
        descs, truth = [], []
        for k, mix in enumerate(mixes):
            for _ in range(10):
                base = rng.standard_normal((16, 16, 3)) @ mix
                img = (base - base.min()) / (base.max() - base.min())
                descs.append(rcd.rcd_pipeline(img))
                truth.append(k + 1)
        descs = np.array(descs)
        truth = np.array(truth)
        means = np.array([descs[truth == k].mean(axis=0) for k in (1, 2)])
        assert rand_index(log_euclidean_classify(descs, means), truth) > 0.9


class TestImageFiles:
    @pytest.mark.parametrize("binary", [True, False])
    def test_ppm_roundtrip_8bit(self, tmp_path, binary):
        img = np.round(random_image(11) * 255) / 255
        rcd.write_ppm(tmp_path / "x.ppm", img, binary=binary)
        np.testing.assert_allclose(rcd.read_ppm(tmp_path / "x.ppm"), img, atol=1e-12)

    def test_ppm_roundtrip_16bit(self, tmp_path):
        img = np.round(random_image(12) * 65535) / 65535
        rcd.write_ppm(tmp_path / "x.ppm", img, maxval=65535)
        np.testing.assert_allclose(rcd.read_ppm(tmp_path / "x.ppm"), img, atol=1e-12)

    def test_ppm_comments(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P3\n# made by hand\n2 1\n# max\n10\n10 0 5  0 10 5\n")
        np.testing.assert_allclose(rcd.read_ppm(path), [[[1, 0, 0.5], [0, 1, 0.5]]])

    @pytest.mark.parametrize("content", [b"P5\n1 1\n255\n\x00", b"P6\n2 2\n255\n\x00\x01", b"P3\n1 1\n9\n1 2 30\n",
                                         b"P3\n1", b"P3\nx 1\n255\n1 2 3\n"])
    def test_corrupt_ppm(self, tmp_path, content):
        path = tmp_path / "bad.ppm"
        path.write_bytes(content)
        with pytest.raises(ImageFormatError):
            rcd.read_ppm(path)

    def test_csv_roundtrip_exact(self, tmp_path):
        img = random_image(13)
        rcd.write_image_csv(tmp_path / "x.csv", img)
        np.testing.assert_array_equal(rcd.read_image(tmp_path / "x.csv"), img)

    def test_mask_csv(self, tmp_path):
        (tmp_path / "m.csv").write_text("1,0\n1,1\n")
        np.testing.assert_array_equal(rcd.read_mask_csv(tmp_path / "m.csv"), [[True, False], [True, True]])
        (tmp_path / "bad.csv").write_text("1,2\n1,1\n")
        with pytest.raises(ImageFormatError):
            rcd.read_mask_csv(tmp_path / "bad.csv")

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(ImageFormatError):
            rcd.read_image(tmp_path / "x.png")
