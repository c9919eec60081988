"""Domain types, polar color geometry, CFA indexing and mosaic synthesis.

Brightness ``l`` is the modulus of the color vector and color is the unit
vector ``u = (cos t, sin t cos p, sin t sin p)`` in (G, R, B) order, with
both angles in ``[0, pi/2]``.  The 1D toy mode uses ``p = 0`` so that
``G = l cos t`` and ``R = l sin t``; even sites observe G, odd sites R.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HALF_PI = 0.5 * np.pi

R, G, B = 0, 1, 2
CHANNEL_TAGS = {"R": R, "G": G, "B": B}

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


def _as_grid(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    if a.ndim != 2 or a.size == 0:
        raise DomainError(f"{name} must be a non-empty 2D grid")
    return a


@dataclass(frozen=True)
class RgbImage:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        r, g, b = (_as_grid(c, n) for c, n in ((self.r, "r"), (self.g, "g"), (self.b, "b")))
        if not (r.shape == g.shape == b.shape):
            raise DomainError("channel grids differ in shape")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "b", b)

    @property
    def shape(self):
        return self.r.shape

    @property
    def height(self):
        return self.r.shape[0]

    @property
    def width(self):
        return self.r.shape[1]

    def stack(self):
        """Return an ``(H, W, 3)`` array in R, G, B order."""
        return np.stack([self.r, self.g, self.b], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[..., 0], arr[..., 1], arr[..., 2])

    def crop(self, top, left, height, width):
        sl = (slice(top, top + height), slice(left, left + width))
        return RgbImage(self.r[sl], self.g[sl], self.b[sl])

    def clip(self, lo=0.0, hi=None):
        return RgbImage(*(np.clip(c, lo, hi) for c in (self.r, self.g, self.b)))


@dataclass(frozen=True)
class PolarImage:
    l: np.ndarray
    theta: np.ndarray
    phi: np.ndarray | None = None

    def __post_init__(self):
        l = _as_grid(self.l, "l")
        theta = _as_grid(self.theta, "theta")
        if theta.shape != l.shape:
            raise DomainError("theta and l differ in shape")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "theta", theta)
        if self.phi is not None:
            phi = _as_grid(self.phi, "phi")
            if phi.shape != l.shape:
                raise DomainError("phi and l differ in shape")
            object.__setattr__(self, "phi", phi)

    @property
    def shape(self):
        return self.l.shape

    def phi_or_zero(self):
        return np.zeros_like(self.theta) if self.phi is None else self.phi

    def validate(self, atol=1e-12):
        if np.any(self.l < 0):
            raise DomainError("negative brightness")
        for name, a in (("theta", self.theta), ("phi", self.phi)):
            if a is not None and (np.any(a < -atol) or np.any(a > HALF_PI + atol)):
                raise DomainError(f"{name} outside [0, pi/2]")
        return self


@dataclass(frozen=True)
class CfaPattern:
    """A 2x2 Bayer tile given as a four-letter name read in raster order."""

    name: str = "RGGB"

    def __post_init__(self):
        name = self.name.upper()
        if len(name) != 4 or set(name) - set("RGB"):
            raise DomainError(f"invalid CFA pattern {self.name!r}")
        tags = [CHANNEL_TAGS[c] for c in name]
        if tags.count(G) != 2 or tags.count(R) != 1 or tags.count(B) != 1:
            raise DomainError(f"pattern {self.name!r} needs two G, one R, one B")
        if not ((tags[0] == G and tags[3] == G) or (tags[1] == G and tags[2] == G)):
            raise DomainError(f"G tags of {self.name!r} are not on a diagonal")
        object.__setattr__(self, "name", name)

    @property
    def tile(self):
        return np.array([CHANNEL_TAGS[c] for c in self.name]).reshape(2, 2)

    def channel_map(self, shape):
        """Channel index (R=0, G=1, B=2) observed at every site of ``shape``."""
        h, w = shape
        rows = np.arange(h)[:, None] % 2
        cols = np.arange(w)[None, :] % 2
        return self.tile[rows, cols]

    def offset(self, channel):
        """(row, col) of ``channel`` within the tile; G returns the first one."""
        idx = self.name.index("RGB"[channel])
        return divmod(idx, 2)


def toy_channel_map(n):
    """1D toy rule: even sites see G (``l cos t``), odd sites see R (``l sin t``)."""
    cmap = np.where(np.arange(n) % 2 == 0, G, R)
    return cmap[np.newaxis, :]


@dataclass(frozen=True)
class MosaicFrame:
    samples: np.ndarray
    pattern: CfaPattern | None = None
    sigma: float = 0.0
    bit_depth: int = 8
    black_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_grid(self.samples, "samples"))
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if self.pattern is None and self.samples.shape[0] != 1:
            raise DomainError("frames without a CFA pattern must be 1 x N")

    @property
    def shape(self):
        return self.samples.shape

    @property
    def is_1d(self):
        return self.pattern is None

    def channel_map(self):
        if self.pattern is None:
            return toy_channel_map(self.samples.shape[1])
        return self.pattern.channel_map(self.samples.shape)

    def with_samples(self, samples):
        return MosaicFrame(samples, self.pattern, self.sigma, self.bit_depth,
                           self.black_level, self.seed)


def unit_vectors(theta, phi):
    """Stack of unit color vectors (G, R, B) with the angle axes leading."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([np.cos(theta), st * np.cos(phi), st * np.sin(phi)], axis=-1)


def h_factor(theta, phi, channel):
    """Loading coefficient of ``channel`` ('R', 'G', 'B' or an index) at the given angles.

    Broadcasts over array arguments; ``channel`` may itself be an array of indices.
    """
    if isinstance(channel, str):
        channel = CHANNEL_TAGS[channel.upper()]
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    channel = np.asarray(channel)
    st = np.sin(theta)
    out = np.where(channel == G, np.cos(theta),
                   np.where(channel == R, st * np.cos(phi), st * np.sin(phi)))
    return out[()] if out.ndim == 0 else out


def rgb_to_polar(img: RgbImage) -> PolarImage:
    r, g, b = img.r, img.g, img.b
    if np.any(r < 0) or np.any(g < 0) or np.any(b < 0):
        raise DomainError("negative channel value")
    l = np.sqrt(r * r + g * g + b * b)
    zero = l == 0
    # atan2 keeps full precision near the green axis, where arccos(g / l) does not
    theta = np.arctan2(np.hypot(r, b), g)
    phi = np.arctan2(b, r)
    theta = np.where(zero, 0.25 * np.pi, theta)
    # r = b = 0 with g > 0 leaves phi arbitrary; arctan2 gives 0 there
    phi = np.where(zero, 0.25 * np.pi, np.clip(phi, 0.0, HALF_PI))
    return PolarImage(l, theta, phi)


def polar_to_rgb(img: PolarImage) -> RgbImage:
    img.validate()
    u = unit_vectors(img.theta, img.phi_or_zero())
    l = img.l
    return RgbImage(l * u[..., 1], l * u[..., 0], l * u[..., 2])


def select_channels(img: RgbImage, cmap):
    stacked = img.stack()
    return np.take_along_axis(stacked, cmap[..., None], axis=-1)[..., 0]


def gaussian_noise(shape, seed):
    """Box-Muller normal deviates from a PCG64 stream seeded with ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
    return z[:n].reshape(shape)


def mosaic_sample(img: RgbImage, pattern: CfaPattern | None, sigma: float, seed: int = 0,
                  bit_depth: int = 8, black_level: float = 0.0) -> MosaicFrame:
    """Sample ``img`` through the CFA and add white Gaussian noise.

    ``pattern=None`` selects the 1D toy rule and requires a 1 x N image.
    """
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    if pattern is None:
        if img.height != 1:
            raise DomainError("1D toy mode needs a 1 x N image")
        cmap = toy_channel_map(img.width)
    else:
        cmap = pattern.channel_map(img.shape)
    clean = select_channels(img, cmap)
    samples = clean if sigma == 0 else clean + sigma * gaussian_noise(clean.shape, seed)
    return MosaicFrame(samples, pattern, float(sigma), bit_depth, black_level, seed)


def toy_rgb(l, theta):
    """Two-channel image of the 1D toy problem (B fixed at zero)."""
    l = np.atleast_2d(np.asarray(l, dtype=np.float64))
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), l.shape)
    return RgbImage(l * np.sin(theta), l * np.cos(theta), np.zeros_like(l))
