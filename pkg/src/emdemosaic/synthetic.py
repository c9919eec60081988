"""Synthetic test scenes: textured brightness with piecewise-constant color."""

from __future__ import annotations

import numpy as np

from .core import HALF_PI, DomainError, PolarImage, RgbImage, polar_to_rgb, toy_rgb

DEFAULT_SEGMENTS = (0.35, 1.05, 0.6, 1.25)


def power_law_texture(shape, seed=0, nu=2.0):
    """Zero-mean, unit-std Gaussian field with a ``|w|^-nu`` power spectrum (DC removed)."""
    shape = (1, shape) if np.isscalar(shape) else tuple(shape)
    rng = np.random.default_rng(seed)
    wy = 2 * np.pi * np.fft.fftfreq(shape[0])
    wx = 2 * np.pi * np.fft.fftfreq(shape[1])
    w = np.hypot(wy[:, None], wx[None, :])
    amp = np.zeros(shape)
    amp[w > 0] = w[w > 0] ** (-nu / 2)
    field = np.fft.ifft2(np.fft.fft2(rng.standard_normal(shape)) * amp).real
    sd = field.std()
    return field / sd if sd > 0 else field


def textured_brightness(shape, seed=0, mean=1000.0, contrast=0.3, nu=2.0, floor=0.1):
    """Positive brightness ``mean * (1 + contrast * texture)`` floored at ``floor * mean``."""
    t = power_law_texture(shape, seed, nu)
    return np.maximum(mean * (1.0 + contrast * t), floor * mean)


def parse_segments(spec, n):
    """Per-site angles from ``"t1,t2,..."`` (equal lengths) or ``"t1:len1,t2:len2,..."``."""
    if isinstance(spec, str):
        parts = [p.strip() for p in spec.split(",") if p.strip()]
    else:
        parts = [str(p) for p in spec]
    if not parts:
        raise DomainError("empty segment spec")
    if all(":" in p for p in parts):
        pairs = [(float(a), int(b)) for a, b in (p.split(":") for p in parts)]
        if sum(b for _, b in pairs) != n:
            raise DomainError("segment lengths must add up to n")
    elif any(":" in p for p in parts):
        raise DomainError("mix of sized and unsized segments")
    else:
        k = len(parts)
        edges = np.linspace(0, n, k + 1).round().astype(int)
        pairs = [(float(a), int(edges[i + 1] - edges[i])) for i, a in enumerate(parts)]
    theta = np.concatenate([np.full(b, a) for a, b in pairs])
    if np.any(theta < 0) or np.any(theta > HALF_PI):
        raise DomainError("segment angles must lie in [0, pi/2]")
    return theta


def segment_boundaries(theta):
    """Indices ``k`` where ``theta[k] != theta[k-1]``."""
    theta = np.ravel(theta)
    return np.flatnonzero(np.diff(theta) != 0) + 1


def interior_mask(theta, margin=1):
    """True away from color boundaries by more than ``margin`` sites."""
    theta = np.ravel(theta)
    mask = np.ones(theta.size, dtype=bool)
    for k in segment_boundaries(theta):
        mask[max(0, k - 1 - margin): k + margin] = False
    return mask


def toy_scene(n=256, segments=DEFAULT_SEGMENTS, seed=0, mean=1000.0, contrast=0.3):
    """1D toy truth: textured brightness and piecewise-constant angle; returns (l, theta, rgb)."""
    theta = parse_segments(segments, n)
    l = textured_brightness(n, seed, mean, contrast)[0]
    return l, theta, toy_rgb(l, theta)


def piecewise_color_image(shape=(32, 32), seed=0, n_regions=4, peak=255.0, contrast=0.25):
    """Voronoi regions of random color over textured brightness, scaled so the max is ``0.9 peak``."""
    rng = np.random.default_rng(seed)
    h, w = shape
    centers = rng.uniform(0, 1, (n_regions, 2)) * [h, w]
    theta_r = rng.uniform(0.3, 1.3, n_regions)
    phi_r = rng.uniform(0.2, 1.37, n_regions)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
    label = np.argmin(dist, axis=-1)
    l = textured_brightness(shape, seed + 7919, 1.0, contrast)
    rgb = polar_to_rgb(PolarImage(l, theta_r[label], phi_r[label]))
    top = rgb.stack().max()
    return RgbImage.from_array(rgb.stack() * (0.9 * peak / top))


def constant_color_image(shape=(32, 32), rgb=(120.0, 90.0, 60.0)):
    h, w = shape
    return RgbImage(*(np.full((h, w), float(c)) for c in rgb))


def saturated_texture_patch(size=24, seed=0, peak=255.0):
    """Fine two-color texture of strongly saturated, contrasting hues."""
    rng = np.random.default_rng(seed)
    h = w = size
    a = np.array([0.85, 0.08, 0.12]) * peak
    b = np.array([0.1, 0.2, 0.85]) * peak
    a, b = (np.roll(a, int(rng.integers(3))), np.roll(b, int(rng.integers(3))))
    period = int(rng.integers(2, 4))
    yy, xx = np.mgrid[0:h, 0:w]
    if rng.integers(2):
        mask = ((yy // period + xx // period) % 2).astype(bool)
    else:
        mask = ((xx // period) % 2).astype(bool)
    arr = np.where(mask[..., None], a, b)
    return RgbImage.from_array(arr)


def achromatic_patch(size=24, seed=0, peak=255.0, tint=0.03, contrast=0.3):
    """Near-gray patch with textured brightness and a slight tint."""
    rng = np.random.default_rng(seed)
    l = textured_brightness((size, size), seed, 0.5 * peak, contrast)
    gain = 1.0 + tint * rng.uniform(-1, 1, 3)
    arr = np.clip(l[..., None] * gain, 0, peak)
    return RgbImage.from_array(arr)
