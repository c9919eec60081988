"""EM drivers: constant color and piecewise color on 1D chains, and 2D Bayer demosaicing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from .beta import BetaParams, RegressionTree, build_link_graph
from .core import (G, HALF_PI, R, DomainError, MosaicFrame, PolarImage, RgbImage, h_factor,
                   rgb_to_polar)
from .estep import (PosteriorSummary, assemble_moments, even_odd_aggregates,
                    gaussian_posterior_exact, kalman_estep, qn_estep)
from .mstep import (SurrogateTerms, binary_search_max, coordinate_max_2d, surrogate_2d,
                    surrogate_constant, viterbi_chain)
from .prior import BrightnessPrior, LinkGraph, calibrate_prior

ESTEPS = ("kalman", "quasi-newton", "exact")
SWEEPS = ("colored", "raster")
DEFAULT_D = 1.0
NOISELESS_FLOOR = 1e-6


@dataclass(frozen=True)
class EmConfig:
    """Every tunable of the EM drivers; ``None`` fields resolve from the data or mode."""

    sigma: float | str | None = None  # None: take the frame's sigma; "auto": estimate it
    eps0: float | None = None  # None: calibrate from the samples
    nu: float = 2.0
    omega_min: float | None = None
    beta: BetaParams = field(default_factory=BetaParams)
    tree_path: str | None = None
    constant_d: float | None = None
    max_em_iters: int | None = None  # None: 20 for images, 100 for chains
    angle_tol: float = 1e-4
    estep: str | None = None
    levels: int = 64
    qn_memory: int = 10
    qn_max_iter: int = 500
    ar_order: int = 2
    pad: int = 8
    sweep: str = "colored"
    grid_points: int = 33
    debug: bool = False

    def __post_init__(self):
        if self.max_em_iters is not None and self.max_em_iters < 1:
            raise DomainError("max_em_iters must be >= 1")
        if not self.angle_tol > 0:
            raise DomainError("angle_tol must be positive")
        if self.estep is not None and self.estep not in ESTEPS:
            raise DomainError(f"estep must be one of {ESTEPS}")
        if self.sweep not in SWEEPS:
            raise DomainError(f"sweep must be one of {SWEEPS}")
        if isinstance(self.sigma, str) and self.sigma != "auto":
            raise DomainError("sigma must be a number, 'auto' or unset")
        if isinstance(self.sigma, (int, float)) and self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if self.eps0 is not None and not self.eps0 > 0:
            raise DomainError("eps0 must be positive")
        if self.levels < 2:
            raise DomainError("levels must be >= 2")
        if self.pad < 0:
            raise DomainError("pad must be >= 0")
        if self.constant_d is not None and not 0.25 <= self.constant_d <= 3.0:
            raise DomainError("constant_d must lie in [0.25, 3]")

    def iterations(self, is_1d):
        if self.max_em_iters is not None:
            return self.max_em_iters
        return 100 if is_1d else 20

    def with_beta(self, **kw):
        return replace(self, beta=replace(self.beta, **kw))

    @classmethod
    def keys(cls):
        own = [f.name for f in fields(cls) if f.name != "beta"]
        return own + [f.name for f in fields(BetaParams)]


@dataclass
class EmState:
    """Snapshot of one 2D EM iteration."""

    angles: PolarImage
    posterior: PosteriorSummary
    graph: LinkGraph
    surrogate_before: float
    surrogate_value: float
    iteration: int
    max_angle_change: float


class RunManifest:
    """Ordered ``key = value`` log of one pipeline run."""

    def __init__(self):
        self.entries: list[tuple[str, str]] = []

    def add(self, key, value):
        self.entries.append((str(key), str(value)))

    def warn(self, message):
        self.add("warning", message)

    @property
    def warnings(self):
        return [v for k, v in self.entries if k == "warning"]

    def text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.entries)


@dataclass
class ChainResult:
    theta: np.ndarray
    l_hat: np.ndarray
    rgb: RgbImage
    history: list
    iterations: int
    converged: bool


@dataclass
class DemosaicResult:
    rgb: RgbImage
    states: list
    manifest: RunManifest
    iterations: int
    converged: bool


# ---- closed-form operations on noiseless chains ----

def balance_profile(l):
    """Closest profile (in L2) whose even-site and odd-site sums agree."""
    l = np.asarray(l, dtype=np.float64)
    if l.size < 2:
        raise DomainError("need at least two sites")
    flat = l.ravel()
    a = np.where(np.arange(flat.size) % 2 == 0, 1.0, -1.0)
    out = flat - (a @ flat) / flat.size * a
    return out.reshape(l.shape)


def closed_form_constant(frame: MosaicFrame) -> float:
    """``arctan(sum of odd samples / sum of even samples)`` clipped to ``[0, pi/2]``."""
    y = np.ravel(frame.samples if isinstance(frame, MosaicFrame) else frame)
    se, so = float(y[0::2].sum()), float(y[1::2].sum())
    if se == 0 and so == 0:
        raise DomainError("degenerate input: both sums vanish")
    return float(np.clip(np.arctan2(so, se), 0.0, HALF_PI))


def compose_estimate(summary: PosteriorSummary, angles: PolarImage) -> RgbImage:
    """Channel ``c`` at each site is ``mean * h_factor(theta, phi, c)``."""
    if tuple(summary.shape) != tuple(angles.shape):
        raise DomainError("summary and angles differ in shape")
    m = summary.mean
    th, ph = angles.theta, angles.phi_or_zero()
    return RgbImage(m * h_factor(th, ph, "R"), m * h_factor(th, ph, "G"), m * h_factor(th, ph, "B"))


def estimate_sigma(frame: MosaicFrame) -> float:
    """Noise level from same-channel second differences (robust MAD estimate).

    Not part of the model; used only when no sigma is supplied.
    """
    y = frame.samples
    res = []
    if frame.is_1d:
        for p in (0, 1):
            s = y[0, p::2]
            if s.size >= 3:
                res.append((s[1:-1] - 0.5 * (s[:-2] + s[2:])) / np.sqrt(1.5))
    else:
        for ry in (0, 1):
            for rx in (0, 1):
                s = y[ry::2, rx::2]
                if min(s.shape) >= 3:
                    c = s[1:-1, 1:-1]
                    avg = 0.25 * (s[:-2, 1:-1] + s[2:, 1:-1] + s[1:-1, :-2] + s[1:-1, 2:])
                    res.append(((c - avg) / np.sqrt(1.25)).ravel())
    if not res:
        raise DomainError("frame too small to estimate sigma")
    r = np.concatenate(res)
    return float(1.4826 * np.median(np.abs(r - np.median(r))))


def resolve_sigma(frame: MosaicFrame, cfg: EmConfig) -> float:
    if cfg.sigma is None:
        return float(frame.sigma)
    if cfg.sigma == "auto":
        return estimate_sigma(frame)
    return float(cfg.sigma)


def make_prior(cfg: EmConfig, samples) -> BrightnessPrior:
    samples = np.atleast_2d(samples)
    if cfg.eps0 is None:
        return calibrate_prior(samples, cfg.nu, omega_min=cfg.omega_min)
    return BrightnessPrior(samples.shape, cfg.eps0, cfg.nu, cfg.omega_min)


def noiseless_posterior(frame: MosaicFrame, angles: PolarImage) -> PosteriorSummary:
    """Zero-noise limit: brightness is pinned to ``y / h`` wherever ``h > 0``."""
    h = h_factor(angles.theta, angles.phi_or_zero(), frame.channel_map())
    mean = np.divide(frame.samples, h, out=np.zeros_like(frame.samples), where=h > 1e-12)
    return PosteriorSummary(mean, mean ** 2)


def run_estep(frame: MosaicFrame, angles: PolarImage, prior, cfg: EmConfig, method: str,
              x0=None) -> PosteriorSummary:
    if frame.sigma == 0:
        return noiseless_posterior(frame, angles)
    if method == "exact":
        return gaussian_posterior_exact(frame, angles, prior)
    if method == "kalman":
        return kalman_estep(frame, angles, prior, cfg.ar_order)
    return qn_estep(frame, angles, prior, memory=cfg.qn_memory, max_iter=cfg.qn_max_iter, x0=x0)


def _chain_frame(frame, cfg):
    if not frame.is_1d:
        raise DomainError("chain pipelines need a 1D frame")
    return replace(frame, sigma=resolve_sigma(frame, cfg))


# ---- 1D drivers ----

def em_constant(frame: MosaicFrame, cfg: EmConfig | None = None, prior=None,
                theta0: float | None = None) -> ChainResult:
    """EM for one color shared by every site of a chain.

    Starts from the closed-form estimate unless ``theta0`` is given.  With
    ``sigma = 0`` the posterior collapses onto ``y / h`` and every angle is a
    fixed point, so the start is returned.
    """
    cfg = cfg or EmConfig()
    frame = _chain_frame(frame, cfg)
    n = frame.samples.size
    prior = make_prior(cfg, frame.samples) if prior is None else prior
    method = cfg.estep or ("exact" if n <= 1024 else "kalman")
    if theta0 is None:
        try:
            theta0 = closed_form_constant(frame)
        except DomainError:
            theta0 = 0.25 * np.pi
    theta = float(theta0)
    ones = np.ones((1, n))
    history = [theta]
    it = 0
    golden_tol = min(1e-10, 1e-3 * cfg.angle_tol)
    # noiseless data: the EM map is the identity, so skip the loop
    max_iters = 0 if frame.sigma == 0 else cfg.iterations(True)
    converged = frame.sigma == 0
    for it in range(1, max_iters + 1):
        summary = run_estep(frame, PolarImage(ones, np.full((1, n), theta)), prior, cfg, method)
        P, D2 = assemble_moments(frame, summary)
        Pe, Po, De2, Do2 = even_odd_aggregates(P, D2)
        new = binary_search_max(lambda t: surrogate_constant(t, Pe, Po, De2, Do2), tol=golden_tol)
        history.append(new)
        step = abs(new - theta)
        theta = new
        if step <= cfg.angle_tol:
            converged = True
            break
    angles = PolarImage(ones, np.full((1, n), theta))
    summary = run_estep(frame, angles, prior, cfg, method)
    return ChainResult(np.full(n, theta), summary.mean[0], compose_estimate(summary, angles),
                       history, it, converged)


def em_piecewise_1d(frame: MosaicFrame, cfg: EmConfig | None = None, prior=None,
                    beta0: float | None = None, theta0=None) -> ChainResult:
    """EM with a nearest-neighbor color MRF of uniform weight, maximized by Viterbi.

    ``beta0`` (default ``cfg.beta.beta0``) may be 0 to decouple the sites.
    """
    cfg = cfg or EmConfig()
    frame = _chain_frame(frame, cfg)
    n = frame.samples.size
    prior = make_prior(cfg, frame.samples) if prior is None else prior
    method = cfg.estep or "kalman"
    beta0 = cfg.beta.beta0 if beta0 is None else float(beta0)
    if beta0 < 0:
        raise DomainError("beta0 must be nonnegative")
    if theta0 is None:
        try:
            theta0 = closed_form_constant(frame)
        except DomainError:
            theta0 = 0.25 * np.pi
    theta = np.broadcast_to(np.asarray(theta0, dtype=np.float64), (n,)).copy()
    sigma = frame.sigma if frame.sigma > 0 else NOISELESS_FLOOR * _rms(frame.samples)
    graph = LinkGraph.chain(n, beta0)
    cmap = frame.channel_map()
    ones = np.ones((1, n))
    history = [theta.copy()]
    converged = False
    it = 0
    for it in range(1, cfg.iterations(True) + 1):
        summary = run_estep(frame, PolarImage(ones, theta[None]), prior, cfg, method)
        P, D2 = assemble_moments(frame, summary)
        terms = SurrogateTerms(P, D2, graph, sigma, cmap)
        new = viterbi_chain(terms, cfg.levels)
        history.append(new.copy())
        step = float(np.max(np.abs(new - theta)))
        theta = new
        if step <= cfg.angle_tol:
            converged = True
            break
    angles = PolarImage(ones, theta[None])
    summary = run_estep(frame, angles, prior, cfg, method)
    return ChainResult(theta, summary.mean[0], compose_estimate(summary, angles), history, it,
                       converged)


def _rms(a):
    v = float(np.sqrt(np.mean(np.square(a))))
    return v if v > 0 else 1.0


# ---- 2D initializers and baseline ----

def _require_bayer(frame):
    if frame.is_1d:
        raise DomainError("needs a Bayer frame")
    if min(frame.shape) < 4:
        raise DomainError("frame must be at least 4 x 4")


def _normalized_interp(values, mask, kernel):
    num = ndimage.correlate(np.where(mask, values, 0.0), kernel, mode="mirror")
    den = ndimage.correlate(mask.astype(np.float64), kernel, mode="mirror")
    return num / den


_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])


def bilinear_demosaic(frame: MosaicFrame) -> RgbImage:
    """Per-channel bilinear interpolation (the comparison baseline)."""
    _require_bayer(frame)
    y, cmap = frame.samples, frame.channel_map()
    r = _normalized_interp(y, cmap == R, _K_RB)
    g = _normalized_interp(y, cmap == G, _K_G)
    b = _normalized_interp(y, cmap == 2, _K_RB)
    return RgbImage(r, g, b).clip(0.0)


def laroche_init(frame: MosaicFrame) -> RgbImage:
    """Gradient-directed green interpolation followed by bilinear color differences.

    At an R or B site the horizontal and vertical second differences of that
    chroma channel pick the direction along which the two G neighbors are
    averaged (all four on ties).  R and B elsewhere come from bilinearly
    interpolated ``R - G`` and ``B - G`` added back to G.
    """
    _require_bayer(frame)
    p = 2
    y = np.pad(frame.samples, p, mode="reflect")
    cmap = np.pad(frame.channel_map(), p, mode="reflect")
    c = y[p:-p, p:-p]
    dh = np.abs(2 * c - y[p:-p, :-2 * p] - y[p:-p, 2 * p:])
    dv = np.abs(2 * c - y[:-2 * p, p:-p] - y[2 * p:, p:-p])
    gh = 0.5 * (y[p:-p, p - 1:-p - 1] + y[p:-p, p + 1:y.shape[1] - p + 1])
    gv = 0.5 * (y[p - 1:-p - 1, p:-p] + y[p + 1:y.shape[0] - p + 1, p:-p])
    g_est = np.where(dh < dv, gh, np.where(dv < dh, gv, 0.5 * (gh + gv)))
    m = cmap[p:-p, p:-p]
    g = np.where(m == G, c, g_est)
    dr = _normalized_interp(c - g, m == R, _K_RB)
    db = _normalized_interp(c - g, m == 2, _K_RB)
    return RgbImage(g + dr, g, g + db).clip(0.0)


def pad_frame(frame: MosaicFrame, pad: int) -> MosaicFrame:
    """Mirror-pad (about the edge sample, which keeps the CFA phase) by ``pad`` sites."""
    if pad == 0:
        return frame
    if pad % 2:
        raise DomainError("pad must be even to keep the CFA phase")
    return frame.with_samples(np.pad(frame.samples, pad, mode="reflect"))


def export_peak(frame: MosaicFrame) -> float:
    return float(2 ** frame.bit_depth - 1 - frame.black_level)


# ---- 2D driver ----

def em_demosaic_run(frame: MosaicFrame, cfg: EmConfig | None = None, tree=None,
                    manifest: RunManifest | None = None, site_callback=None) -> DemosaicResult:
    """Full EM demosaicing of a Bayer frame with per-iteration states.

    ``tree`` is a :class:`RegressionTree`, a constant scale, or ``None``
    (then ``cfg.constant_d`` or 1.0).  ``site_callback(sites, before, after)``
    sees every M-step update.
    """
    cfg = cfg or EmConfig()
    _require_bayer(frame)
    manifest = manifest if manifest is not None else RunManifest()
    sigma = resolve_sigma(frame, cfg)
    pad = cfg.pad + cfg.pad % 2
    padded = pad_frame(frame, pad)
    sigma_eff = sigma if sigma > 0 else NOISELESS_FLOOR * _rms(padded.samples)
    work = replace(padded, sigma=sigma_eff)
    prior = make_prior(cfg, padded.samples)
    method = cfg.estep or "quasi-newton"
    if tree is None:
        tree = cfg.constant_d if cfg.constant_d is not None else DEFAULT_D
    if not isinstance(tree, (RegressionTree, int, float)):
        raise DomainError("tree must be a RegressionTree or a number")
    cmap = work.channel_map()

    manifest.add("shape", f"{frame.shape[0]}x{frame.shape[1]}")
    manifest.add("sigma", repr(sigma))
    manifest.add("sigma_effective", repr(sigma_eff))
    manifest.add("eps0", repr(prior.eps0))
    manifest.add("nu", repr(prior.nu))
    manifest.add("omega_min", repr(prior.omega_min))
    manifest.add("estep", method)
    manifest.add("scale_model", "tree" if isinstance(tree, RegressionTree) else f"constant {tree!r}")
    for k in ("beta0", "alpha", "R", "radius", "prune_eps"):
        manifest.add(k, repr(getattr(cfg.beta, k)))
    manifest.add("threads", 1)

    init = laroche_init(padded)
    polar = rgb_to_polar(init)
    angles = PolarImage(polar.l, polar.theta, polar.phi)
    states = []
    x0 = polar.l
    converged = False
    it = 0
    t_start = time.perf_counter()
    callback = site_callback
    if cfg.debug:
        callback = _ascent_checker(site_callback)
    for it in range(1, cfg.iterations(False) + 1):
        t0 = time.perf_counter()
        summary = run_estep(work, angles, prior, cfg, method, x0=x0)
        if not summary.converged:
            manifest.warn(f"iteration {it}: E-step did not reach grad_tol; best iterate kept")
        x0 = summary.mean
        P, D2 = assemble_moments(work, summary)
        working = compose_estimate(summary, angles).clip(0.0)
        current = PolarImage(np.maximum(summary.mean, 0.0), angles.theta, angles.phi)
        graph = build_link_graph(current, working, tree, cfg.beta)
        terms = SurrogateTerms(P, D2, graph, sigma_eff, cmap)
        before = surrogate_2d(angles, terms)
        new = coordinate_max_2d(angles, terms, cfg.sweep, reverse=(it % 2 == 0),
                                grid_points=cfg.grid_points, callback=callback)
        after = surrogate_2d(new, terms)
        change = float(max(np.max(np.abs(new.theta - angles.theta)),
                           np.max(np.abs(new.phi - angles.phi))))
        angles = PolarImage(current.l, new.theta, new.phi)
        states.append(EmState(angles, summary, graph, before, after, it, change))
        manifest.add(f"iter{it}.surrogate", repr(after))
        manifest.add(f"iter{it}.max_angle_change", repr(change))
        manifest.add(f"iter{it}.links", len(graph))
        manifest.add(f"iter{it}.estep_iterations", summary.iterations)
        manifest.add(f"iter{it}.seconds", f"{time.perf_counter() - t0:.3f}")
        if change <= cfg.angle_tol:
            converged = True
            break
    summary = run_estep(work, angles, prior, cfg, method, x0=x0)
    full = compose_estimate(PosteriorSummary(np.maximum(summary.mean, 0.0), summary.second_moment),
                            angles)
    h, w = frame.shape
    out = full.crop(pad, pad, h, w).clip(0.0, export_peak(frame))
    manifest.add("iterations", it)
    manifest.add("converged", converged)
    manifest.add("seconds", f"{time.perf_counter() - t_start:.3f}")
    return DemosaicResult(out, states, manifest, it, converged)


def em_demosaic(frame: MosaicFrame, cfg: EmConfig | None = None, tree=None,
                manifest: RunManifest | None = None) -> RgbImage:
    return em_demosaic_run(frame, cfg, tree, manifest).rgb


def _ascent_checker(inner=None, slack=1e-10):
    def check(sites, before, after):
        bad = after < before - slack * np.maximum(1.0, np.abs(before))
        if np.any(bad):
            raise AssertionError(f"surrogate decreased at sites {np.asarray(sites)[bad]}")
        if inner is not None:
            inner(sites, before, after)
    return check
