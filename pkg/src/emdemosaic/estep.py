"""Posterior brightness moments under the linear-Gaussian observation model.

Given angles, the observations are ``y = D l + noise`` with ``D = diag(h)``,
noise ``N(0, sigma^2 I)`` and ``l ~ N(0, Sigma)``.  Every solver here returns
the per-site posterior mean and second moment ``E[l_j^2 | y]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import DomainError, MosaicFrame, PolarImage, h_factor
from .lbfgs import lbfgs
from .prior import ArSurrogatePrior, BrightnessPrior, fit_ar_surrogate


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    second_moment: np.ndarray
    converged: bool = True
    iterations: int = 0

    @property
    def variance(self):
        return np.maximum(self.second_moment - self.mean ** 2, 0.0)

    @property
    def shape(self):
        return self.mean.shape


def loadings(frame: MosaicFrame, angles: PolarImage) -> np.ndarray:
    """Diagonal of ``D``: the loading ``h_j`` of the channel observed at each site."""
    if tuple(angles.shape) != tuple(frame.shape):
        raise DomainError("angles and frame differ in shape")
    return h_factor(angles.theta, angles.phi_or_zero(), frame.channel_map())


def _require_sigma(frame):
    if not frame.sigma > 0:
        raise DomainError("the posterior needs sigma > 0")
    return frame.sigma


def gaussian_posterior_exact(frame: MosaicFrame, angles: PolarImage, prior) -> PosteriorSummary:
    """Dense-algebra posterior; for oracles and small problems only."""
    n = frame.samples.size
    if n > 4096:
        raise DomainError("dense posterior limited to 4096 sites")
    sigma = _require_sigma(frame)
    h = loadings(frame, angles).ravel()
    y = frame.samples.ravel()
    A = prior.precision_matrix() + np.diag(h * h / sigma ** 2)
    cf = cho_factor(A)
    mean = cho_solve(cf, h * y / sigma ** 2)
    var = np.diag(cho_solve(cf, np.eye(n)))
    shape = frame.shape
    return PosteriorSummary(mean.reshape(shape), (var + mean ** 2).reshape(shape))


def log_marginal_likelihood(frame: MosaicFrame, angles: PolarImage, prior) -> float:
    """``log p(y | angles)`` with brightness integrated out: ``y ~ N(0, D Sigma D + sigma^2 I)``."""
    sigma = frame.sigma
    h = loadings(frame, angles).ravel()
    y = frame.samples.ravel()
    C = h[:, None] * prior.covariance_matrix() * h[None, :]
    C[np.diag_indices_from(C)] += sigma ** 2
    cf = cho_factor(C)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(-0.5 * (y @ cho_solve(cf, y) + logdet + len(y) * np.log(2 * np.pi)))


def kalman_estep(frame: MosaicFrame, angles: PolarImage, prior, order: int = 2) -> PosteriorSummary:
    """Kalman filter and RTS smoother along a 1D chain.

    A :class:`BrightnessPrior` is first replaced by its AR(``order``)
    surrogate; pass an :class:`ArSurrogatePrior` to control it directly.
    """
    if not frame.is_1d:
        raise DomainError("kalman_estep runs on 1D frames only")
    sigma = _require_sigma(frame)
    if isinstance(prior, BrightnessPrior):
        prior = fit_ar_surrogate(prior, order)
    if not isinstance(prior, ArSurrogatePrior):
        raise DomainError("kalman_estep needs an AR surrogate prior")
    h = loadings(frame, angles)[0]
    y = frame.samples[0]
    n, p = len(y), prior.order
    F = prior.transition()
    Q = np.zeros((p, p))
    Q[0, 0] = prior.q
    r = sigma ** 2

    m_pred = np.zeros((n, p))
    P_pred = np.zeros((n, p, p))
    m_filt = np.zeros((n, p))
    P_filt = np.zeros((n, p, p))
    m, P = np.zeros(p), prior.state_covariance()
    for t in range(n):
        if t > 0:
            m = F @ m
            P = F @ P @ F.T + Q
        m_pred[t], P_pred[t] = m, P
        # observation picks the first state component scaled by h_t
        ph = P[:, 0] * h[t]
        s = h[t] * ph[0] + r
        k = ph / s
        m = m + k * (y[t] - h[t] * m[0])
        P = P - np.outer(k, ph)
        P = 0.5 * (P + P.T)
        m_filt[t], P_filt[t] = m, P

    m_s, P_s = m_filt[-1].copy(), P_filt[-1].copy()
    mean = np.empty(n)
    var = np.empty(n)
    mean[-1], var[-1] = m_s[0], P_s[0, 0]
    for t in range(n - 2, -1, -1):
        gain = np.linalg.solve(P_pred[t + 1], F @ P_filt[t]).T
        m_s = m_filt[t] + gain @ (m_s - m_pred[t + 1])
        P_s = P_filt[t] + gain @ (P_s - P_pred[t + 1]) @ gain.T
        mean[t], var[t] = m_s[0], P_s[0, 0]
    shape = frame.shape
    return PosteriorSummary(mean.reshape(shape), (var + mean ** 2).reshape(shape), True, n)


def _probe_sites(shape, stride):
    """Flat indices of probe sites: every CFA phase sampled on a ``stride`` lattice."""
    h, w = shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    mask = ((rows % stride) < 2) & ((cols % stride) < 2)
    return np.flatnonzero(mask)


def _interp_phase(values, shape, stride):
    """Fill every site from probe values on its own CFA phase by separable linear interpolation."""
    h, w = shape
    out = np.empty(shape)
    for ry in range(min(2, h)):
        for rx in range(min(2, w)):
            fine_r = np.arange(ry, h, 2)
            fine_c = np.arange(rx, w, 2)
            coarse_r = np.arange(ry, h, stride)
            coarse_c = np.arange(rx, w, stride)
            grid = values[np.ix_(coarse_r, coarse_c)]
            along_c = np.stack([np.interp(fine_c, coarse_c, row) for row in grid])
            full = np.stack([np.interp(fine_r, coarse_r, col) for col in along_c.T], axis=1)
            out[np.ix_(fine_r, fine_c)] = full
    return out


def qn_estep(frame: MosaicFrame, angles: PolarImage, prior: BrightnessPrior, memory: int = 10,
             max_iter: int = 500, grad_tol: float | None = None,
             probe_stride: int | None = None, refine_steps: int | None = None,
             x0=None) -> PosteriorSummary:
    """Posterior mode by limited-memory BFGS, variances from its inverse-Hessian estimate.

    The mode of a Gaussian is its mean, so minimizing
    ``|D l - y|^2 / (2 sigma^2) + l' Sigma^-1 l / 2`` gives the posterior mean.
    The initial inverse Hessian is a Jacobi-scaled circulant
    ``S C S`` with ``S = diag(h^2/sigma^2 + diag(Sigma^-1))^-1/2``.  Variances are
    read off the final approximation at probe sites (all four CFA phases on a
    ``probe_stride`` lattice), optionally sharpened by ``refine_steps`` conjugate
    gradient steps preconditioned with that same approximation; between probes
    the ratio to ``diag(S C S)`` is interpolated per phase.  Chains default to
    probing every site with two refinement steps, images to a stride of 4
    without refinement.
    """
    if memory < 2:
        raise DomainError("memory must be >= 2")
    sigma = _require_sigma(frame)
    shape = frame.shape
    h = loadings(frame, angles).ravel()
    y = frame.samples.ravel()
    s2 = sigma ** 2
    b = h * y / s2
    if grad_tol is None:
        grad_tol = 1e-8 * max(np.linalg.norm(b), 1e-300)
    if not grad_tol > 0:
        raise DomainError("grad_tol must be positive")
    h2 = h * h / s2
    mult = prior.multipliers()
    scale = 1.0 / np.sqrt(h2 + np.mean(1.0 / mult))
    gain = 1.0 / (np.mean(scale * scale * h2) + np.mean(scale) ** 2 / mult)

    def grad(l):
        return h2 * l - b + prior.apply_precision(l)

    def hess_vec(d):
        return h2 * d + prior.apply_precision(d)

    def hess_cols(v):
        k = v.shape[1]
        cube = v.reshape(shape + (k,))
        prec = np.fft.ifft2(np.fft.fft2(cube, axes=(0, 1)) / mult[..., None], axes=(0, 1)).real
        return h2[:, None] * v + prec.reshape(-1, k)

    def h0(v):
        if v.ndim == 1:
            return scale * np.fft.ifft2(np.fft.fft2((scale * v).reshape(shape)) * gain).real.ravel()
        k = v.shape[1]
        cube = (scale[:, None] * v).reshape(shape + (k,))
        out = np.fft.ifft2(np.fft.fft2(cube, axes=(0, 1)) * gain[..., None], axes=(0, 1)).real
        return scale[:, None] * out.reshape(-1, k)

    start = np.zeros_like(y) if x0 is None else np.ravel(x0).astype(np.float64)
    res = lbfgs(grad, start, hess_vec=hess_vec, h0=h0, memory=memory, max_iter=max_iter,
                grad_tol=grad_tol)
    mean = res.x

    if probe_stride is None:
        probe_stride = 2 if frame.is_1d else 4
    if refine_steps is None:
        refine_steps = 2 if frame.is_1d else 0
    stride = max(2, int(probe_stride) // 2 * 2)
    probes = _probe_sites(shape, stride)
    cols = np.arange(len(probes))
    basis = np.zeros((y.size, len(probes)))
    basis[probes, cols] = 1.0
    base_diag = scale * scale * float(np.mean(gain))
    ratio = np.ones(y.size)
    cols_inv = _pcg_columns(hess_cols, res.inverse_hessian, basis, refine_steps)
    ratio[probes] = cols_inv[probes, cols] / base_diag[probes]
    ratio = _interp_phase(ratio.reshape(shape), shape, stride).ravel()
    var = base_diag * np.maximum(ratio, 1e-6)
    return PosteriorSummary(mean.reshape(shape), (var + mean ** 2).reshape(shape),
                            res.converged, res.n_iter)


def _pcg_columns(apply_a, apply_m, rhs, steps):
    """Preconditioned CG on every column of ``rhs``, started from ``M rhs``."""
    x = apply_m(rhs)
    if steps <= 0:
        return x
    r = rhs - apply_a(x)
    z = apply_m(r)
    p = z.copy()
    rz = np.sum(r * z, axis=0)
    for _ in range(steps):
        ap = apply_a(p)
        pap = np.sum(p * ap, axis=0)
        alpha = np.divide(rz, pap, out=np.zeros_like(rz), where=pap > 0)
        x += alpha * p
        r -= alpha * ap
        z = apply_m(r)
        rz_new = np.sum(r * z, axis=0)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz > 0)
        p = z + beta * p
        rz = rz_new
    return x


def assemble_moments(frame: MosaicFrame, summary: PosteriorSummary):
    """``P_j = y_j E[l_j]`` and ``Delta2_j = E[l_j^2]``."""
    if tuple(frame.shape) != tuple(summary.shape):
        raise DomainError("frame and summary differ in shape")
    return frame.samples * summary.mean, summary.second_moment.copy()


def even_odd_aggregates(P, Delta2):
    """Sums over even and odd chain sites: ``(Pe, Po, De2, Do2)``."""
    P = np.ravel(P)
    Delta2 = np.ravel(Delta2)
    return (float(P[0::2].sum()), float(P[1::2].sum()),
            float(Delta2[0::2].sum()), float(Delta2[1::2].sum()))
