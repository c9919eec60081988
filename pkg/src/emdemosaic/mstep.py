"""Maximization of the EM surrogate over color angles.

All surrogate values are the angle-dependent part of ``sigma^2 L``:

    sum_j (h_j P_j - h_j^2 Delta2_j / 2) - sigma^2 sum_<ij> w_ij |u_i x u_j|
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HALF_PI, DomainError, PolarImage, h_factor, unit_vectors
from .prior import LinkGraph, cross_norm

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SurrogateTerms:
    P: np.ndarray
    Delta2: np.ndarray
    graph: LinkGraph
    sigma: float
    channels: np.ndarray

    def __post_init__(self):
        for name in ("P", "Delta2", "channels"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name))))
        if np.any(self.Delta2 < 0):
            raise DomainError("Delta2 must be nonnegative")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not (self.P.shape == self.Delta2.shape == self.channels.shape == tuple(self.graph.shape)):
            raise DomainError("surrogate terms differ in shape")

    @property
    def shape(self):
        return self.P.shape


def surrogate_constant(theta, Pe, Po, De2, Do2):
    """Constant-color surrogate ``Pe cos t + Po sin t - (De2 cos^2 t + Do2 sin^2 t) / 2``."""
    c, s = np.cos(theta), np.sin(theta)
    return Pe * c + Po * s - 0.5 * (De2 * c * c + Do2 * s * s)


def binary_search_max(f, tol=1e-8, lo=0.0, hi=HALF_PI):
    """Golden-section search for the maximizer of a quasi-concave ``f`` on ``[lo, hi]``."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    best = 0.5 * (a + b)
    fbest = f(best)
    for edge in (lo, hi):
        fe = f(edge)
        if fe > fbest:
            best, fbest = edge, fe
    return best


def angle_levels(levels):
    if levels < 2:
        raise DomainError("need at least two levels")
    return np.linspace(0.0, HALF_PI, levels)


def _unary(levels_grid, P, Delta2, channels, phi=0.0):
    """Per-site, per-level data term; shape (n_sites, n_levels)."""
    h = h_factor(levels_grid[None, :], phi, channels[:, None])
    return h * P[:, None] - 0.5 * h * h * Delta2[:, None]


def chain_objective(theta, terms: SurrogateTerms) -> float:
    """Surrogate value of a 1D angle sequence (phi fixed at 0)."""
    theta = np.ravel(theta)
    P, D2, ch = terms.P.ravel(), terms.Delta2.ravel(), terms.channels.ravel()
    h = h_factor(theta, 0.0, ch)
    w = terms.graph.chain_weights()
    data = np.sum(h * P - 0.5 * h * h * D2)
    return float(data - terms.sigma ** 2 * np.sum(w * np.abs(np.sin(theta[:-1] - theta[1:]))))


def viterbi_chain(terms: SurrogateTerms, levels: int = 64) -> np.ndarray:
    """Exact maximizer of the surrogate over a uniform angle grid on a chain.

    Among equal-valued optima the lexicographically smallest level sequence wins.
    """
    if not terms.graph.is_chain():
        raise DomainError("viterbi_chain needs a loop-free chain graph")
    grid = angle_levels(levels)
    n = terms.P.size
    U = _unary(grid, terms.P.ravel(), terms.Delta2.ravel(), terms.channels.ravel())
    w = terms.graph.chain_weights() * terms.sigma ** 2
    pair = np.abs(np.sin(grid[:, None] - grid[None, :]))
    scale = np.max(np.abs(U)) + np.max(w, initial=0.0) + 1.0
    tie = 1e-12 * scale

    # V[j, k]: best value of sites j..n-1 given site j takes level k
    V = np.empty((n, levels))
    V[-1] = U[-1]
    for j in range(n - 2, -1, -1):
        V[j] = U[j] + np.max(V[j + 1][None, :] - w[j] * pair, axis=1)

    path = np.empty(n, dtype=np.int64)
    path[0] = _first_max(V[0], tie)
    for j in range(n - 1):
        path[j + 1] = _first_max(V[j + 1] - w[j] * pair[path[j]], tie)
    return grid[path]


def _first_max(values, tie):
    return int(np.flatnonzero(values >= values.max() - tie)[0])


def _local_values(theta, phi, channel, nbr_u, nbr_w, P, D2, sigma):
    """Site-local surrogate for candidate angles.

    ``theta``/``phi`` have shape (n, G); ``nbr_u`` (n, K, 3); ``nbr_w`` (n, K);
    ``channel``, ``P``, ``D2`` are per-site (n,).
    """
    theta, phi = np.broadcast_arrays(theta, phi)
    h = h_factor(theta, phi, channel[:, None])
    data = h * P[:, None] - 0.5 * h * h * D2[:, None]
    u = unit_vectors(theta, phi)
    c = cross_norm(u[:, :, None, :], nbr_u[:, None, :, :])
    return data - sigma ** 2 * np.einsum("ngk,nk->ng", c, nbr_w)


def local_surrogate_2d(theta_j, phi_j, channel_j, neighbors, P_j, Delta2_j, sigma):
    """Terms of the surrogate that depend on one site.

    ``neighbors`` is a sequence of ``(u_k, weight)`` pairs with unit 3-vectors.
    """
    if isinstance(channel_j, str):
        channel_j = "RGB".index(channel_j.upper())
    if len(neighbors):
        nbr_u = np.array([u for u, _ in neighbors], dtype=np.float64)[None]
        nbr_w = np.array([w for _, w in neighbors], dtype=np.float64)[None]
    else:
        nbr_u = np.zeros((1, 1, 3))
        nbr_w = np.zeros((1, 1))
    if np.any(nbr_w < 0):
        raise DomainError("negative neighbor weight")
    val = _local_values(np.array([[theta_j]]), np.array([[phi_j]]), np.array([channel_j]),
                        nbr_u, nbr_w, np.array([P_j]), np.array([Delta2_j]), sigma)
    return float(val[0, 0])


def surrogate_2d(angles: PolarImage, terms: SurrogateTerms) -> float:
    """Global surrogate value, each link counted once."""
    theta, phi = angles.theta, angles.phi_or_zero()
    h = h_factor(theta, phi, terms.channels)
    data = np.sum(h * terms.P - 0.5 * h * h * terms.Delta2)
    u = unit_vectors(theta, phi).reshape(-1, 3)
    g = terms.graph
    penalty = np.sum(g.w * cross_norm(u[g.i], u[g.j]))
    return float(data - terms.sigma ** 2 * penalty)


def independent_sets(graph: LinkGraph):
    """Greedy raster-order coloring; returns a list of site-index arrays with no internal links."""
    nbr, wt = graph.adjacency()
    n = graph.n_sites
    color = np.full(n, -1)
    linked = wt > 0
    for s in range(n):
        used = color[nbr[s][linked[s]]]
        used = set(used[used >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[s] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


class _SiteUpdater:
    """Vectorized coordinate ascent on any set of mutually unlinked sites."""

    def __init__(self, angles: PolarImage, terms: SurrogateTerms, grid_points=33, tol=1e-5):
        self.shape = angles.shape
        self.has_phi = angles.phi is not None
        self.theta = angles.theta.ravel().copy()
        self.phi = angles.phi_or_zero().ravel().copy()
        self.u = unit_vectors(self.theta, self.phi)
        self.nbr, self.wt = terms.graph.adjacency()
        self.P = terms.P.ravel()
        self.D2 = terms.Delta2.ravel()
        self.ch = terms.channels.ravel()
        self.sigma = terms.sigma
        self.grid = np.linspace(0.0, HALF_PI, grid_points)
        self.tol = tol
        width = 2 * HALF_PI / (grid_points - 1)
        self.n_golden = max(1, int(np.ceil(np.log(tol / width) / np.log(GOLDEN))))

    def local(self, sites, theta=None, phi=None):
        theta = self.theta[sites][:, None] if theta is None else theta
        phi = self.phi[sites][:, None] if phi is None else phi
        return _local_values(theta, phi, self.ch[sites], self.u[self.nbr[sites]],
                             self.wt[sites], self.P[sites], self.D2[sites], self.sigma)

    def update(self, sites, coord):
        """Maximize over one coordinate at ``sites``; returns (before, after) local values."""
        cur = self.theta if coord == "theta" else self.phi
        x_cur = cur[sites]
        n = len(sites)

        def ev(x):
            return self.local(sites, theta=x, phi=None) if coord == "theta" else \
                self.local(sites, theta=None, phi=x)

        before = ev(x_cur[:, None])[:, 0]
        vals = ev(np.broadcast_to(self.grid, (n, len(self.grid))))
        k = np.argmax(vals, axis=1)
        best_x = self.grid[k]
        best_v = vals[np.arange(n), k]
        a = self.grid[np.maximum(k - 1, 0)]
        b = self.grid[np.minimum(k + 1, len(self.grid) - 1)]
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        both = ev(np.stack([x1, x2], axis=1))
        f1, f2 = both[:, 0], both[:, 1]
        for _ in range(self.n_golden):
            left = f1 >= f2
            na = np.where(left, a, x1)
            nb = np.where(left, x2, b)
            nx1 = np.where(left, nb - GOLDEN * (nb - na), x2)
            nx2 = np.where(left, x1, na + GOLDEN * (nb - na))
            fp = ev(np.where(left, nx1, nx2)[:, None])[:, 0]
            f1, f2 = np.where(left, fp, f2), np.where(left, f1, fp)
            a, b, x1, x2 = na, nb, nx1, nx2
        mid = 0.5 * (a + b)
        fm = ev(mid[:, None])[:, 0]
        take = fm > best_v
        best_x = np.where(take, mid, best_x)
        best_v = np.where(take, fm, best_v)
        improve = best_v > before
        new_x = np.where(improve, best_x, x_cur)
        after = np.where(improve, best_v, before)
        cur[sites] = new_x
        self.u[sites] = unit_vectors(self.theta[sites], self.phi[sites])
        return before, after

    def angles(self, l=None):
        l = np.ones(self.shape) if l is None else l
        phi = self.phi.reshape(self.shape) if self.has_phi else None
        return PolarImage(l, self.theta.reshape(self.shape), phi)


def coordinate_max_2d(angles: PolarImage, terms: SurrogateTerms, sweep_order: str = "colored",
                      reverse: bool = False, grid_points: int = 33, tol: float = 1e-5,
                      callback=None) -> PolarImage:
    """One generalized-EM sweep of univariate maximizations (theta, then phi, per site).

    ``sweep_order='raster'`` visits sites one at a time in raster order
    (``reverse`` flips it) and calls ``callback(site, before, after)`` after
    each site.  ``'colored'`` updates whole independent sets of the link graph
    at once; sites in one set share no links so the result per site is the same
    as a sequential visit.  A coordinate only moves when the local value
    strictly increases, so the surrogate never decreases.
    """
    if tuple(angles.shape) != tuple(terms.shape):
        raise DomainError("angles and terms differ in shape")
    upd = _SiteUpdater(angles, terms, grid_points, tol)
    coords = ("theta", "phi") if upd.has_phi else ("theta",)
    if sweep_order == "raster":
        order = np.arange(terms.graph.n_sites)
        groups = [np.array([s]) for s in (order[::-1] if reverse else order)]
    elif sweep_order == "colored":
        groups = independent_sets(terms.graph)
        if reverse:
            groups = groups[::-1]
    else:
        raise DomainError(f"unknown sweep order {sweep_order!r}")
    for sites in groups:
        before = None
        for coord in coords:
            b, after = upd.update(sites, coord)
            before = b if before is None else before
        if callback is not None:
            callback(sites, before, after)
    return upd.angles(angles.l)
