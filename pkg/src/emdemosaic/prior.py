"""Gaussian brightness prior with a power-law spectrum, and the pairwise color MRF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov, toeplitz

from .core import DomainError, PolarImage, unit_vectors


@dataclass(frozen=True)
class BrightnessPrior:
    """Stationary zero-mean Gaussian field diagonalized by the DFT.

    The spectral multiplier at frequency ``w`` is ``eps0 * max(|w|, omega_min) ** -nu``;
    ``|w|`` is the Euclidean norm on the 2D frequency grid (a 1 x N shape
    reduces to the 1D chain).
    """

    shape: tuple
    eps0: float = 1.0
    nu: float = 2.0
    omega_min: float | None = None

    def __post_init__(self):
        shape = tuple(int(s) for s in (self.shape if np.ndim(self.shape) else (1, self.shape)))
        if len(shape) == 1:
            shape = (1,) + shape
        object.__setattr__(self, "shape", shape)
        if self.omega_min is None:
            object.__setattr__(self, "omega_min", 2 * np.pi / max(shape))
        if not self.eps0 > 0:
            raise DomainError("eps0 must be positive")
        if not self.nu >= 0:
            raise DomainError("nu must be nonnegative")
        if not 0 < self.omega_min <= np.pi:
            raise DomainError("omega_min must lie in (0, pi]")

    @property
    def n_sites(self):
        return self.shape[0] * self.shape[1]

    def frequencies(self):
        wy = 2 * np.pi * np.fft.fftfreq(self.shape[0])
        wx = 2 * np.pi * np.fft.fftfreq(self.shape[1])
        return np.hypot(wy[:, None], wx[None, :])

    def multipliers(self):
        return spectral_multipliers(self)

    def _check(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.n_sites:
            raise DomainError(f"vector of length {v.size} does not match {self.n_sites} sites")
        return v

    def _filter(self, v, gain):
        v = self._check(v)
        out = np.fft.ifft2(np.fft.fft2(v.reshape(self.shape)) * gain).real
        return out.reshape(v.shape)

    def apply_covariance(self, v):
        return self._filter(v, self.multipliers())

    def apply_precision(self, v):
        return apply_precision(self, v)

    def covariance_matrix(self):
        return _circulant(np.fft.ifft2(self.multipliers()).real)

    def precision_matrix(self):
        return _circulant(np.fft.ifft2(1.0 / self.multipliers()).real)

    def marginal_variance(self):
        return float(np.mean(self.multipliers()))


def _circulant(kernel):
    """Dense (block-)circulant matrix whose action is circular convolution with ``kernel``."""
    h, w = kernel.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    dr = (rows[:, None] - rows[None, :]) % h
    dc = (cols[:, None] - cols[None, :]) % w
    return kernel[dr, dc]


def spectral_multipliers(prior: BrightnessPrior) -> np.ndarray:
    w = np.maximum(prior.frequencies(), prior.omega_min)
    return prior.eps0 * w ** (-prior.nu)


def apply_precision(prior: BrightnessPrior, v) -> np.ndarray:
    return prior._filter(v, 1.0 / spectral_multipliers(prior))


def calibrate_prior(samples, nu=2.0, omega_min=None, gain=1.0) -> BrightnessPrior:
    """Prior whose marginal std matches the spread (std) of the observed samples.

    The mean brightness is left to the data: with many sites it is pinned by
    the likelihood, and counting it here would flatten the prior at every
    frequency.  Constant inputs fall back to the mean squared sample.
    ``gain`` scales the target variance.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    target = float(np.var(samples))
    if target <= 0:
        target = float(np.mean(samples ** 2))
    if target <= 0:
        target = 1.0
    target *= gain
    unit = BrightnessPrior(samples.shape, 1.0, nu, omega_min)
    return BrightnessPrior(samples.shape, target / unit.marginal_variance(), nu, unit.omega_min)


@dataclass(frozen=True)
class ArSurrogatePrior:
    """Stationary AR(p) process ``l_t = sum_k a_k l_{t-k} + e_t``, ``e_t ~ N(0, q)``."""

    n_sites: int
    coeffs: np.ndarray
    q: float

    @property
    def shape(self):
        return (1, self.n_sites)

    @property
    def order(self):
        return len(self.coeffs)

    def transition(self):
        p = self.order
        F = np.zeros((p, p))
        F[0, :] = self.coeffs
        F[1:, :-1] = np.eye(p - 1)
        return F

    def state_covariance(self):
        """Stationary covariance of the state ``(l_t, ..., l_{t-p+1})``."""
        p = self.order
        Q = np.zeros((p, p))
        Q[0, 0] = self.q
        P = solve_discrete_lyapunov(self.transition(), Q)
        return 0.5 * (P + P.T)

    def autocovariance(self):
        p = self.order
        gamma = np.empty(max(self.n_sites, p))
        gamma[:p] = self.state_covariance()[0, :p]
        for k in range(p, len(gamma)):
            gamma[k] = np.dot(self.coeffs, gamma[k - 1::-1][:p])
        return gamma[: self.n_sites]

    def covariance_matrix(self):
        return toeplitz(self.autocovariance())

    def precision_matrix(self):
        return np.linalg.inv(self.covariance_matrix())

    def apply_covariance(self, v):
        return self.covariance_matrix() @ np.ravel(v)

    def apply_precision(self, v):
        return np.linalg.solve(self.covariance_matrix(), np.ravel(v))


def fit_ar_surrogate(prior: BrightnessPrior, order: int = 2) -> ArSurrogatePrior:
    """Least-squares linear-prediction (Yule-Walker) fit of an AR model to ``prior``'s spectrum."""
    if prior.shape[0] != 1:
        raise DomainError("AR surrogate is defined for 1D chains only")
    if order < 1:
        raise DomainError("order must be >= 1")
    c = np.fft.ifft(spectral_multipliers(prior)[0]).real
    if len(c) <= order:
        c = np.concatenate([c, np.zeros(order + 1 - len(c))])
    a = np.linalg.solve(toeplitz(c[:order]), c[1 : order + 1])
    q = float(c[0] - a @ c[1 : order + 1])
    return ArSurrogatePrior(prior.n_sites, a, q)


@dataclass(frozen=True)
class LinkGraph:
    """Undirected weighted links between flat site indices of a grid.

    Each pair is stored once with ``i < j``.
    """

    shape: tuple
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        w = np.asarray(self.w, dtype=np.float64)
        if not (i.shape == j.shape == w.shape):
            raise DomainError("link arrays differ in length")
        if np.any(i == j):
            raise DomainError("self-links are not allowed")
        if np.any(w < 0):
            raise DomainError("negative link weight")
        n = self.shape[0] * self.shape[1]
        if i.size and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= n):
            raise DomainError("link outside the grid")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "i", lo)
        object.__setattr__(self, "j", hi)
        object.__setattr__(self, "w", w)

    @property
    def n_sites(self):
        return self.shape[0] * self.shape[1]

    def __len__(self):
        return len(self.w)

    @classmethod
    def chain(cls, n, weight):
        weight = np.broadcast_to(np.asarray(weight, dtype=np.float64), (n - 1,))
        idx = np.arange(n - 1)
        return cls((1, n), idx, idx + 1, weight.copy())

    def is_chain(self):
        """True when every link joins consecutive sites of a 1D array, each at most once."""
        if self.shape[0] != 1:
            return False
        if np.any(self.j - self.i != 1):
            return False
        return len(np.unique(self.i)) == len(self.i)

    def chain_weights(self):
        """Per-gap weights ``w[k]`` for the link (k, k+1); missing links weigh 0."""
        if not self.is_chain():
            raise DomainError("graph is not a loop-free chain")
        out = np.zeros(self.n_sites - 1)
        out[self.i] = self.w
        return out

    def adjacency(self):
        """Padded neighbor table: ``(nbr, weight)`` arrays of shape (n_sites, max_degree).

        Unused slots point at the site itself with weight 0.
        """
        n = self.n_sites
        src = np.concatenate([self.i, self.j])
        dst = np.concatenate([self.j, self.i])
        w = np.concatenate([self.w, self.w])
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        deg = np.bincount(src, minlength=n)
        kmax = int(deg.max()) if n and len(src) else 0
        nbr = np.repeat(np.arange(n)[:, None], max(kmax, 1), axis=1)
        wt = np.zeros((n, max(kmax, 1)))
        start = np.concatenate([[0], np.cumsum(deg)[:-1]])
        slot = np.arange(len(src)) - start[src]
        nbr[src, slot] = dst
        wt[src, slot] = w
        return nbr, wt


def cross_norm(u, v):
    """``|u x v|`` along the last axis, computed from the cross product components."""
    c0 = u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1]
    c1 = u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2]
    c2 = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    return np.sqrt(c0 * c0 + c1 * c1 + c2 * c2)


def color_potential(u_i, u_j, atol=1e-9) -> float:
    u_i = np.asarray(u_i, dtype=np.float64)
    u_j = np.asarray(u_j, dtype=np.float64)
    for u in (u_i, u_j):
        if abs(np.linalg.norm(u) - 1.0) > atol:
            raise DomainError("color vectors must be unit norm")
    return float(min(cross_norm(u_i, u_j), 1.0))


def mrf_energy(angles: PolarImage, graph: LinkGraph) -> float:
    """Unnormalized negative log color prior ``sum_ij w_ij |u_i x u_j|``."""
    if tuple(angles.shape) != tuple(graph.shape):
        raise DomainError("graph and image differ in shape")
    u = unit_vectors(angles.theta, angles.phi_or_zero()).reshape(-1, 3)
    return float(np.sum(graph.w * cross_norm(u[graph.i], u[graph.j])))
