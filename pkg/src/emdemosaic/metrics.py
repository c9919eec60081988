"""Image quality measures: composite PSNR and a spatial-CIELAB approximation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import ndimage

from .core import DomainError, RgbImage

PSNR_CAP = 99.0
DEFAULT_PPD = 23.0
D65_WHITE_LINEAR = np.ones(3)


@dataclass(frozen=True)
class MetricReport:
    image_id: str
    psnr_db: float
    scielab_mean: float
    mse_r: float
    mse_g: float
    mse_b: float


def _check_pair(ref: RgbImage, test: RgbImage):
    if tuple(ref.shape) != tuple(test.shape):
        raise DomainError("images differ in shape")


def channel_mse(ref: RgbImage, test: RgbImage):
    _check_pair(ref, test)
    d = ref.stack() - test.stack()
    return tuple(float(np.mean(d[..., c] ** 2)) for c in range(3))


def cpsnr(ref: RgbImage, test: RgbImage, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)`` over all channels and pixels, capped at 99 dB."""
    _check_pair(ref, test)
    if not peak > 0:
        raise DomainError("peak must be positive")
    mse = float(np.mean((ref.stack() - test.stack()) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


@lru_cache(maxsize=1)
def scielab_constants():
    """Pinned transform and filter constants (see ``data/scielab.json``)."""
    text = resources.files("emdemosaic").joinpath("data/scielab.json").read_text()
    return json.loads(text)


def gaussian_kernel_1d(spread_px, truncate):
    """Samples of ``exp(-x^2 / s^2)``, normalized to unit sum."""
    std = spread_px / np.sqrt(2.0)
    radius = max(1, int(np.ceil(truncate * std)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (spread_px * spread_px))
    return k / k.sum()


def _filter_plane(plane, components, ppd, truncate):
    out = np.zeros_like(plane)
    for spread_deg, weight in components:
        k = gaussian_kernel_1d(spread_deg * ppd, truncate)
        tmp = ndimage.correlate1d(plane, k, axis=0, mode="mirror")
        out += weight * ndimage.correlate1d(tmp, k, axis=1, mode="mirror")
    return out


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(np.maximum(t, delta ** 3)), t / (3 * delta * delta) + 4.0 / 29.0)


def xyz_to_lab(xyz, white):
    fx, fy, fz = (_lab_f(xyz[..., i] / white[i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def scielab_filtered_lab(img: RgbImage, pixels_per_degree=DEFAULT_PPD, peak=255.0):
    """Spatially filtered CIELAB image of linear RGB data scaled by ``peak``."""
    c = scielab_constants()
    m_xyz = np.array(c["xyz_from_linear_srgb"])
    m_opp = np.array(c["opponent_from_xyz"])
    rgb = img.stack() / peak
    xyz = rgb @ m_xyz.T
    opp = xyz @ m_opp.T
    filt = np.stack([_filter_plane(opp[..., i], c["filters"][name], pixels_per_degree, c["truncate"])
                     for i, name in enumerate(("lum", "rg", "by"))], axis=-1)
    xyz_f = filt @ np.linalg.inv(m_opp).T
    white = m_xyz @ D65_WHITE_LINEAR
    return xyz_to_lab(xyz_f, white)


def scielab_approx(ref: RgbImage, test: RgbImage, pixels_per_degree: float = DEFAULT_PPD,
                   peak: float = 255.0) -> float:
    """Mean CIELAB color difference after opponent-space spatial filtering (an approximation)."""
    _check_pair(ref, test)
    if not pixels_per_degree > 0:
        raise DomainError("pixels_per_degree must be positive")
    if not peak > 0:
        raise DomainError("peak must be positive")
    if np.array_equal(ref.stack(), test.stack()):
        return 0.0
    a = scielab_filtered_lab(ref, pixels_per_degree, peak)
    b = scielab_filtered_lab(test, pixels_per_degree, peak)
    return float(np.mean(np.sqrt(np.sum((a - b) ** 2, axis=-1))))


def evaluate_pair(ref: RgbImage, test: RgbImage, image_id: str = "", peak: float = 255.0,
                  pixels_per_degree: float = DEFAULT_PPD, metrics=("cpsnr", "scielab")) -> MetricReport:
    mse = channel_mse(ref, test)
    p = cpsnr(ref, test, peak) if "cpsnr" in metrics else float("nan")
    s = scielab_approx(ref, test, pixels_per_degree, peak) if "scielab" in metrics else float("nan")
    return MetricReport(image_id, p, s, *mse)
