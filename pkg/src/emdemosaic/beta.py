"""Adaptive link weights: the hand-crafted form, the constancy-scale tree and its trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DomainError, PolarImage, RgbImage
from .prior import LinkGraph

D_MIN, D_MAX = 0.25, 3.0
WINDOW_SIZES = (3, 5, 9, 15, 21)
ATTRIBUTE_NAMES = tuple(
    f"{q}_{stat}_w{w}" for w in WINDOW_SIZES for q in ("g", "r_g", "b_g") for stat in ("max", "min")
)
N_ATTRIBUTES = len(ATTRIBUTE_NAMES)
DEFAULT_CANDIDATES = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)


@dataclass(frozen=True)
class BetaParams:
    beta0: float = 1.0
    alpha: float = 4.0
    R: float | None = None  # None: 10% of the brightness range
    radius: float = 3.0
    prune_eps: float = 1e-3

    def __post_init__(self):
        if not self.beta0 > 0:
            raise DomainError("beta0 must be positive")
        if self.alpha < 0:
            raise DomainError("alpha must be nonnegative")
        if self.R is not None and not self.R > 0:
            raise DomainError("R must be positive")
        if not self.radius >= 1:
            raise DomainError("radius must be >= 1")
        if self.prune_eps < 0:
            raise DomainError("prune_eps must be nonnegative")

    def resolved_R(self, l):
        if self.R is not None:
            return self.R
        span = float(np.ptp(l)) if np.size(l) else 0.0
        return 0.1 * span if span > 0 else 1.0


class RegressionTree:
    """Binary regression tree stored as parallel node arrays; node 0 is the root.

    Internal nodes send ``x[attr] <= threshold`` to ``left``.  Leaves carry
    ``attr == -1`` and a value in ``[0.25, 3]``.
    """

    def __init__(self, attr, threshold, left, right, value, arity=N_ATTRIBUTES):
        self.attr = np.asarray(attr, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.arity = int(arity)
        self._validate()

    @classmethod
    def constant(cls, d, arity=N_ATTRIBUTES):
        return cls([-1], [0.0], [-1], [-1], [d], arity)

    @property
    def n_nodes(self):
        return len(self.attr)

    def _validate(self):
        n = self.n_nodes
        if n == 0:
            raise DomainError("empty tree")
        if not all(len(a) == n for a in (self.threshold, self.left, self.right, self.value)):
            raise DomainError("node arrays differ in length")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            k = stack.pop()
            if not 0 <= k < n or seen[k]:
                raise DomainError("malformed tree: bad or repeated child reference")
            seen[k] = True
            if self.attr[k] < 0:
                if not D_MIN <= self.value[k] <= D_MAX:
                    raise DomainError(f"leaf value {self.value[k]} outside [{D_MIN}, {D_MAX}]")
            else:
                if self.attr[k] >= self.arity:
                    raise DomainError("attribute index beyond arity")
                stack.extend([int(self.left[k]), int(self.right[k])])
        if not seen.all():
            raise DomainError("malformed tree: unreachable nodes")

    def predict(self, attrs):
        """Predicted scale for one attribute vector or a batch (rows)."""
        x = np.asarray(attrs, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        node = np.zeros(len(x), dtype=np.int64)
        active = self.attr[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            k = node[idx]
            go_left = x[idx, self.attr[k]] <= self.threshold[k]
            node[idx] = np.where(go_left, self.left[k], self.right[k])
            active = self.attr[node] >= 0
        out = np.clip(self.value[node], D_MIN, D_MAX)
        return float(out[0]) if single else out

    def depth(self):
        def rec(k):
            return 0 if self.attr[k] < 0 else 1 + max(rec(self.left[k]), rec(self.right[k]))
        return rec(0)


def predict_d(tree: RegressionTree, attrs) -> float:
    return tree.predict(attrs)


def _channel_quantities(img: RgbImage):
    return img.g, img.r - img.g, img.b - img.g


def attribute_field(img: RgbImage) -> np.ndarray:
    """Attribute vectors for every site, shape (H, W, 30), mirror-padded borders."""
    out = []
    quantities = _channel_quantities(img)
    for w in WINDOW_SIZES:
        for q in quantities:
            out.append(ndimage.maximum_filter(q, size=w, mode="mirror"))
            out.append(ndimage.minimum_filter(q, size=w, mode="mirror"))
    return np.stack(out, axis=-1)


def extract_attributes(img: RgbImage, site) -> np.ndarray:
    row, col = site
    if not (0 <= row < img.height and 0 <= col < img.width):
        raise DomainError("site out of bounds")
    half = WINDOW_SIZES[-1] // 2
    padded = [np.pad(q, half, mode="reflect") for q in _channel_quantities(img)]
    vec = []
    for w in WINDOW_SIZES:
        r = w // 2
        for p in padded:
            win = p[row + half - r: row + half + r + 1, col + half - r: col + half + r + 1]
            vec.extend([win.max(), win.min()])
    return np.array(vec)


def beta_link(i, j, l, d_i, d_j, params: BetaParams) -> float:
    """Link weight between sites ``i`` and ``j`` given as (row, col) pairs."""
    l = np.atleast_2d(l)
    dist2 = float((i[0] - j[0]) ** 2 + (i[1] - j[1]) ** 2)
    if dist2 > params.radius ** 2 + 1e-12:
        raise DomainError("sites farther apart than the link radius")
    d = min(d_i, d_j)
    R = params.resolved_R(l)
    dl = abs(l[i[0], i[1]] - l[j[0], j[1]])
    return float(params.beta0 * np.exp(-0.5 * dist2 / d ** 2) * (1.0 + params.alpha * np.exp(-dl / R)))


def link_offsets(radius):
    """Half-plane offsets (dy, dx) with ``0 < dy^2 + dx^2 <= radius^2``."""
    r = int(np.floor(radius))
    out = []
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if (dy == 0 and dx <= 0) or dy * dy + dx * dx > radius ** 2 + 1e-12:
                continue
            out.append((dy, dx))
    return out


def scale_field(working_rgb: RgbImage, tree) -> np.ndarray:
    """Per-site constancy scale from a tree, or a constant when ``tree`` is a number."""
    if isinstance(tree, (int, float)):
        return np.full(working_rgb.shape, float(np.clip(tree, D_MIN, D_MAX)))
    attrs = attribute_field(working_rgb)
    return tree.predict(attrs.reshape(-1, attrs.shape[-1])).reshape(working_rgb.shape)


def build_link_graph(polar: PolarImage, working_rgb: RgbImage, tree, params: BetaParams) -> LinkGraph:
    """All links within ``params.radius`` weighted at the current brightness and scales."""
    shape = polar.shape
    if tuple(working_rgb.shape) != tuple(shape):
        raise DomainError("working image and polar image differ in shape")
    h, w = shape
    l = polar.l
    d = scale_field(working_rgb, tree)
    R = params.resolved_R(l)
    flat = np.arange(h * w).reshape(shape)
    ii, jj, ww = [], [], []
    for dy, dx in link_offsets(params.radius):
        if dy >= h or abs(dx) >= w:
            continue
        rows = slice(0, h - dy)
        cols_a = slice(max(0, -dx), w - max(0, dx))
        cols_b = slice(max(0, dx), max(0, dx) + (cols_a.stop - cols_a.start))
        a = flat[rows, cols_a]
        b = flat[dy:, cols_b]
        dd = np.minimum(d[rows, cols_a], d[dy:, cols_b])
        dl = np.abs(l[rows, cols_a] - l[dy:, cols_b])
        wt = params.beta0 * np.exp(-0.5 * (dy * dy + dx * dx) / dd ** 2) * (1.0 + params.alpha * np.exp(-dl / R))
        ii.append(a.ravel())
        jj.append(b.ravel())
        ww.append(wt.ravel())
    if ii:
        i, j, wt = np.concatenate(ii), np.concatenate(jj), np.concatenate(ww)
    else:
        i = j = np.zeros(0, dtype=np.int64)
        wt = np.zeros(0)
    keep = wt >= params.prune_eps * params.beta0
    return LinkGraph(shape, i[keep], j[keep], wt[keep])


def _best_split(X, y, min_leaf, tol):
    """Best (attr, threshold, gain) by SSE reduction; ties go to the lowest attr, then threshold."""
    n, m = X.shape
    total = y.sum()
    best = (None, None, 0.0)
    for f in range(m):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        n_right = n - n_left
        gain = csum ** 2 / n_left + (total - csum) ** 2 / n_right - total ** 2 / n
        gain = np.where(valid, gain, -np.inf)
        g_max = gain.max()
        k = int(np.flatnonzero(gain >= g_max - tol)[0])
        if best[0] is None or gain[k] > best[2] + tol:
            best = (f, 0.5 * (xs[k] + xs[k + 1]), float(gain[k]))
    return best


def train_tree(samples, min_leaf: int = 1, max_depth: int | None = None) -> RegressionTree:
    """CART regression tree grown by exhaustive variance-reduction splits.

    ``samples`` is a sequence of ``(attribute_vector, d)`` pairs or an
    ``(X, y)`` tuple of arrays.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 2:
        X, y = (np.asarray(a, dtype=np.float64) for a in samples)
    else:
        X = np.array([np.asarray(a, dtype=np.float64) for a, _ in samples])
        y = np.array([float(d) for _, d in samples])
    if min_leaf < 1:
        raise DomainError("min_leaf must be >= 1")
    if len(y) < 2 * min_leaf:
        raise DomainError("need at least 2 * min_leaf samples")
    if np.any(y < D_MIN) or np.any(y > D_MAX):
        raise DomainError("labels must lie in [0.25, 3]")
    tol = 1e-12 * max(1.0, float(np.sum(y * y)))
    nodes = []

    def grow(idx, depth):
        k = len(nodes)
        nodes.append([-1, 0.0, -1, -1, float(np.clip(y[idx].mean(), D_MIN, D_MAX))])
        ys = y[idx]
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf \
                or np.ptp(ys) == 0:
            return k
        f, thr, _ = _best_split(X[idx], ys, min_leaf, tol)
        if f is None:
            return k
        go_left = X[idx, f] <= thr
        nodes[k][0], nodes[k][1] = f, thr
        nodes[k][2] = grow(idx[go_left], depth + 1)
        nodes[k][3] = grow(idx[~go_left], depth + 1)
        return k

    grow(np.arange(len(y)), 0)
    cols = list(zip(*nodes))
    return RegressionTree(*cols, arity=X.shape[1])


def selected_pixels(shape, stride=4):
    """Interior sites on a ``stride`` lattice where the largest window fits."""
    half = WINDOW_SIZES[-1] // 2
    h, w = shape
    rows = np.arange(half, h - half, stride)
    cols = np.arange(half, w - half, stride)
    return [(int(r), int(c)) for r in rows for c in cols]


def label_patches(patches, candidate_ds=DEFAULT_CANDIDATES, cfg=None, sigma=None, pattern="RGGB",
                  seed=0, stride=4, peak=255.0, psnr_log=None):
    """Label patches with the constancy scale that demosaics them best.

    Each patch is mosaicked (noise ``sigma``, default 2% of ``peak``) and
    demosaiced once per candidate scale.  The scale with the highest CPSNR
    against the patch wins; ties go to the largest scale.  Attributes come from
    the winning demosaiced image at :func:`selected_pixels`.  When ``psnr_log``
    is a list, one ``{"d": [...], "psnr": [...], "chosen": d}`` entry is
    appended per patch.
    """
    from .core import CfaPattern, mosaic_sample
    from .metrics import cpsnr
    from .pipeline import EmConfig, em_demosaic

    cfg = cfg or EmConfig()
    cands = sorted(float(d) for d in candidate_ds)
    if not cands or cands[0] < D_MIN or cands[-1] > D_MAX:
        raise DomainError("candidate scales must lie in [0.25, 3]")
    sigma = 0.02 * peak if sigma is None else float(sigma)
    pat = CfaPattern(pattern)
    out = []
    for k, patch in enumerate(patches):
        if min(patch.shape) < 24:
            raise DomainError("patches must be at least 24 x 24")
        frame = mosaic_sample(patch, pat, sigma, seed=seed + k)
        scores, images = [], []
        for d in cands:
            img = em_demosaic(frame, cfg, tree=d)
            scores.append(cpsnr(patch, img, peak))
            images.append(img)
        scores = np.array(scores)
        tie = 1e-9 * max(1.0, float(np.max(np.abs(scores))))
        best = int(np.flatnonzero(scores >= scores.max() - tie)[-1])
        chosen = cands[best]
        if psnr_log is not None:
            psnr_log.append({"d": list(cands), "psnr": scores.tolist(), "chosen": chosen})
        attrs = attribute_field(images[best])
        for r, c in selected_pixels(patch.shape, stride):
            out.append((attrs[r, c].copy(), chosen))
    return out
