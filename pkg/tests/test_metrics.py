"""Image metrics and the uncertainty transform."""

import numpy as np
import pytest

from punavs.imageio import Image
from punavs.metrics import (
    PSNR_CAP_DB,
    UncertaintyKind,
    mse,
    psnr,
    ssim,
    to_uncertainty,
)

skimage_metrics = pytest.importorskip("skimage.metrics")


def img(arr):
    return Image(np.ascontiguousarray(np.atleast_3d(np.asarray(arr, dtype=np.float64))))


def random_pair(seed, h=24, w=24, c=3):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (h, w, c))
    b = np.clip(a + rng.normal(0, 0.08, (h, w, c)), 0, 1)
    return img(a), img(b)


class TestMse:
    def test_zero_for_identical(self):
        a, _ = random_pair(0)
        assert mse(a, a) == 0.0

    def test_matches_definition(self):
        a, b = random_pair(1)
        expected = float(np.mean((a.pixels - b.pixels) ** 2))
        assert mse(a, b) == pytest.approx(expected, rel=1e-15)

    def test_shape_mismatch_rejected(self):
        a, _ = random_pair(2)
        b = img(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            mse(a, b)


class TestPsnr:
    def test_cap_for_identical_images(self):
        a, _ = random_pair(3)
        assert psnr(a, a) == PSNR_CAP_DB == 100.0

    def test_closed_form_relation(self):
        # psnr = -10 log10(mse) for unit peak, at 1e-9 relative
        for seed in range(5):
            a, b = random_pair(seed)
            m = mse(a, b)
            assert psnr(a, b) == pytest.approx(-10.0 * np.log10(m), rel=1e-9)

    def test_known_uniform_error(self):
        a = img(np.zeros((4, 4, 1)))
        b = img(np.full((4, 4, 1), 0.1))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


class TestSsim:
    def test_one_for_identical(self):
        a, _ = random_pair(4)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_matches_reference_on_gradient_shift(self):
        # shifted-gradient case: structured, smooth, non-trivial covariance
        x = np.linspace(0, 1, 32)
        base = np.outer(x, x)
        a = img(base)
        b = img(np.clip(base + 0.05, 0, 1))
        ref = skimage_metrics.structural_similarity(
            a.pixels[:, :, 0],
            b.pixels[:, :, 0],
            data_range=1.0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
        )
        assert ssim(a, b) == pytest.approx(ref, abs=1e-4)

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_matches_reference_on_noise(self, seed):
        a, b = random_pair(seed, h=28, w=20, c=1)
        ref = skimage_metrics.structural_similarity(
            a.pixels[:, :, 0],
            b.pixels[:, :, 0],
            data_range=1.0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
        )
        assert ssim(a, b) == pytest.approx(ref, abs=1e-4)

    def test_rgb_is_channel_mean(self):
        a, b = random_pair(13, c=3)
        per_channel = [
            ssim(img(a.pixels[:, :, i]), img(b.pixels[:, :, i])) for i in range(3)
        ]
        assert ssim(a, b) == pytest.approx(np.mean(per_channel), abs=1e-12)

    def test_too_small_rejected(self):
        a = img(np.zeros((8, 8, 1)))
        with pytest.raises(ValueError):
            ssim(a, a)

    def test_symmetry(self):
        a, b = random_pair(14)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


class TestToUncertainty:
    def test_psnr_mapping(self):
        k = UncertaintyKind.PSNR
        assert to_uncertainty(0.0, k) == 1.0
        assert to_uncertainty(50.0, k) == 0.0
        assert to_uncertainty(100.0, k) == 0.0  # clamped above 50
        assert to_uncertainty(25.0, k) == pytest.approx(0.5)
        assert to_uncertainty(-3.0, k) == 1.0

    def test_ssim_mapping(self):
        k = UncertaintyKind.SSIM
        assert to_uncertainty(1.0, k) == 0.0
        assert to_uncertainty(0.0, k) == 1.0
        assert to_uncertainty(0.25, k) == pytest.approx(0.75)
        assert to_uncertainty(-0.5, k) == 1.0  # ssim can go negative

    def test_mse_mapping(self):
        k = UncertaintyKind.MSE
        assert to_uncertainty(0.0, k) == 0.0
        assert to_uncertainty(0.3, k) == pytest.approx(0.3)
        assert to_uncertainty(2.0, k) == 1.0

    def test_reserved_kind_rejected(self):
        with pytest.raises(ValueError):
            to_uncertainty(0.5, UncertaintyKind.LPIPS_RESERVED)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            to_uncertainty(float("nan"), UncertaintyKind.PSNR)

    def test_output_always_in_unit_interval(self):
        rng = np.random.default_rng(15)
        for kind in (UncertaintyKind.PSNR, UncertaintyKind.SSIM, UncertaintyKind.MSE):
            for v in rng.uniform(-100, 200, 100):
                u = to_uncertainty(float(v), kind)
                assert 0.0 <= u <= 1.0

    def test_kind_tokens(self):
        assert UncertaintyKind.from_token("psnr") is UncertaintyKind.PSNR
        assert UncertaintyKind.from_token("ssim") is UncertaintyKind.SSIM
        with pytest.raises(ValueError):
            UncertaintyKind.from_token("vgg")
