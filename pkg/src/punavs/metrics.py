"""Full-reference image quality metrics and their uncertainty transforms.

All metrics take two images of identical shape with values in [0, 1].
PSNR uses a unit peak and is capped at 100 dB once the MSE drops below
1e-10, so identical images compare equal instead of diverging. SSIM is
the windowed form with an 11-tap Gaussian (sigma 1.5), constants
K1 = 0.01 and K2 = 0.03 on a unit dynamic range, averaged over the valid
interior and over channels.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.ndimage import correlate1d

from .imageio import Image

PSNR_CAP_DB = 100.0
_PSNR_CAP_MSE = 1e-10
_SSIM_RADIUS = 5
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


class UncertaintyKind(enum.Enum):
    """Which metric a per-anchor uncertainty value was derived from."""

    PSNR = "psnr"
    SSIM = "ssim"
    MSE = "mse"
    # Recognized in files for forward compatibility; no transform exists.
    LPIPS_RESERVED = "lpips"

    @classmethod
    def from_token(cls, token: str) -> "UncertaintyKind":
        for kind in cls:
            if kind.value == token:
                return kind
        raise ValueError(f"unknown uncertainty kind token {token!r}")


def _check_pair(a: Image, b: Image) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(
            f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )


def mse(a: Image, b: Image) -> float:
    _check_pair(a, b)
    d = a.pixels - b.pixels
    return float(np.mean(d * d))


def psnr(a: Image, b: Image) -> float:
    """10*log10(1 / mse) for unit-range images, capped at 100 dB."""
    err = mse(a, b)
    if err < _PSNR_CAP_MSE:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / err)


def _gaussian_window(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


_SSIM_WINDOW = _gaussian_window(_SSIM_RADIUS, _SSIM_SIGMA)


def _windowed_mean(plane: np.ndarray) -> np.ndarray:
    # Constant-mode edges are cropped below, leaving the valid interior.
    out = correlate1d(plane, _SSIM_WINDOW, axis=0, mode="constant")
    out = correlate1d(out, _SSIM_WINDOW, axis=1, mode="constant")
    return out[_SSIM_RADIUS:-_SSIM_RADIUS, _SSIM_RADIUS:-_SSIM_RADIUS]


def ssim(a: Image, b: Image) -> float:
    _check_pair(a, b)
    size = 2 * _SSIM_RADIUS + 1
    if a.height < size or a.width < size:
        raise ValueError(
            f"images must be at least {size}x{size} for the SSIM window, "
            f"got {a.height}x{a.width}"
        )
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    scores = []
    for ch in range(a.channels):
        x = a.pixels[:, :, ch]
        y = b.pixels[:, :, ch]
        mu_x = _windowed_mean(x)
        mu_y = _windowed_mean(y)
        var_x = _windowed_mean(x * x) - mu_x * mu_x
        var_y = _windowed_mean(y * y) - mu_y * mu_y
        cov = _windowed_mean(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def to_uncertainty(value: float, kind: UncertaintyKind) -> float:
    """Map a metric value onto [0, 1] where 1 means most uncertain.

    PSNR saturates at 50 dB (u = 1 - min(v, 50)/50), SSIM inverts and
    clamps (negative SSIM maps to 1), MSE clamps at 1. The reserved
    LPIPS kind has no transform and is rejected.
    """
    if not math.isfinite(value):
        raise ValueError(f"metric value must be finite, got {value}")
    if kind is UncertaintyKind.PSNR:
        return 1.0 - min(max(value, 0.0), 50.0) / 50.0
    if kind is UncertaintyKind.SSIM:
        return min(1.0, max(0.0, 1.0 - value))
    if kind is UncertaintyKind.MSE:
        return min(max(value, 0.0), 1.0)
    raise ValueError(f"no uncertainty transform for kind {kind.value!r}")
