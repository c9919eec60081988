"""File formats: netpbm images, mosaics with sidecars, configs, trees, CSV reports."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .beta import BetaParams, RegressionTree
from .core import CfaPattern, DomainError, MosaicFrame, RgbImage
from .pipeline import EmConfig

_WS = b" \t\n\r\v\f"


class FormatError(DomainError):
    """Malformed or unsupported file content."""


# ---- netpbm ----

def _read_token(data, pos):
    while True:
        while pos < len(data) and data[pos] in _WS:
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and data[pos] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated header")
    return data[start:pos], pos


def parse_netpbm(data: bytes):
    """Decode binary P5/P6 bytes into ``(raw array, maxval)``; P6 gives (H, W, 3)."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError("not a binary PGM/PPM (P5/P6)")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    vals = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed header field {tok!r}")
        vals.append(int(tok))
    width, height, maxval = vals
    if width <= 0 or height <= 0:
        raise FormatError("image dimensions must be positive")
    if not 0 < maxval < 65536:
        raise FormatError(f"unsupported maxval {maxval}")
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after maxval")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FormatError("truncated payload")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    if raw.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raw.reshape(shape), maxval


def encode_netpbm(raw, maxval: int) -> bytes:
    raw = np.asarray(raw)
    if not 0 < maxval < 65536:
        raise FormatError(f"unsupported maxval {maxval}")
    magic = b"P6" if raw.ndim == 3 else b"P5"
    h, w = raw.shape[:2]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + np.ascontiguousarray(raw, dtype=dtype).tobytes()


def quantize(values, maxval):
    """Clamp to ``[0, maxval]`` and round half to even."""
    return np.rint(np.clip(values, 0, maxval)).astype(np.int64)


def bit_depth_of(maxval: int) -> int:
    return int(maxval).bit_length()


def read_image_raw(path):
    with open(path, "rb") as fh:
        return parse_netpbm(fh.read())


def read_image(path, black_level: float = 0.0) -> RgbImage:
    raw, _ = read_image_raw(path)
    if raw.ndim != 3:
        raise FormatError(f"{path}: expected a color PPM (P6)")
    return RgbImage.from_array(raw.astype(np.float64) - black_level)


def write_image(img: RgbImage, path, maxval: int = 255, black_level: float = 0.0):
    raw = quantize(img.stack() + black_level, maxval)
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(raw, maxval))


# ---- mosaics ----

@dataclass(frozen=True)
class SidecarMeta:
    pattern: str = "RGGB"
    sigma: float = 0.0
    bit_depth: int = 8
    black_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        CfaPattern(self.pattern)
        if self.sigma < 0:
            raise FormatError("sigma must be nonnegative")
        if not 1 <= self.bit_depth <= 16:
            raise FormatError("bit_depth must lie in [1, 16]")


def meta_path(path):
    return str(path) + ".meta"


def format_meta(meta: SidecarMeta) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(meta, f.name))}\n" for f in dataclasses.fields(meta))


def parse_meta(text: str) -> SidecarMeta:
    kv = parse_key_values(text)
    known = {f.name: f for f in dataclasses.fields(SidecarMeta)}
    out = {}
    for k, v in kv.items():
        if k not in known:
            raise FormatError(f"unknown sidecar key {k!r}")
        out[k] = _coerce(v, known[k].type, k)
    return SidecarMeta(**out)


def write_mosaic(frame: MosaicFrame, path):
    if frame.pattern is None:
        raise FormatError("only Bayer frames can be written as PGM mosaics")
    maxval = 2 ** frame.bit_depth - 1
    raw = quantize(frame.samples + frame.black_level, maxval)
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(raw, maxval))
    meta = SidecarMeta(frame.pattern.name, float(frame.sigma), int(frame.bit_depth),
                       float(frame.black_level), int(frame.seed))
    with open(meta_path(path), "w") as fh:
        fh.write(format_meta(meta))


def read_mosaic(path) -> MosaicFrame:
    side = meta_path(path)
    if not os.path.exists(side):
        raise FormatError(f"missing sidecar {side}")
    with open(side) as fh:
        meta = parse_meta(fh.read())
    raw, maxval = read_image_raw(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected a grayscale PGM (P5)")
    if maxval > 2 ** meta.bit_depth - 1:
        raise FormatError("maxval exceeds the sidecar bit depth")
    return MosaicFrame(raw.astype(np.float64) - meta.black_level, CfaPattern(meta.pattern),
                       meta.sigma, meta.bit_depth, meta.black_level, meta.seed)


# ---- key = value configs ----

def parse_key_values(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; duplicate keys are errors."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", k):
            raise FormatError(f"line {n}: bad key {k!r}")
        if k in out:
            raise FormatError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def _coerce(value: str, typ, key):
    typ = str(typ)
    low = value.lower()
    if low in ("none", "") and "None" in typ:
        return None
    try:
        if typ.startswith("bool"):
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ.startswith("int"):
            return int(value)
        if typ.startswith("float"):
            if "str" in typ and low == "auto":
                return "auto"
            return float(value)
        return value
    except ValueError:
        raise FormatError(f"invalid value {value!r} for {key}") from None


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> EmConfig:
    kv = parse_key_values(text)
    own = {f.name: f for f in dataclasses.fields(EmConfig) if f.name != "beta"}
    beta_fields = {f.name: f for f in dataclasses.fields(BetaParams)}
    cfg_kw, beta_kw = {}, {}
    for k, v in kv.items():
        if k in own:
            cfg_kw[k] = _coerce(v, own[k].type, k)
        elif k in beta_fields:
            beta_kw[k] = _coerce(v, beta_fields[k].type, k)
        else:
            raise FormatError(f"unknown config key {k!r}")
    return EmConfig(beta=BetaParams(**beta_kw), **cfg_kw)


def format_config(cfg: EmConfig) -> str:
    lines = [f"{f.name} = {_fmt(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)
             if f.name != "beta"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.beta, f.name))}" for f in dataclasses.fields(cfg.beta)]
    return "\n".join(lines) + "\n"


def read_config(path) -> EmConfig:
    with open(path) as fh:
        return parse_config(fh.read())


# ---- regression trees ----

def _g17(x):
    return "%.17g" % x


def format_tree(tree: RegressionTree) -> str:
    lines = [f"dtree v1 {tree.n_nodes} {tree.arity}"]
    for k in range(tree.n_nodes):
        if tree.attr[k] < 0:
            lines.append(f"L {k} {_g17(tree.value[k])}")
        else:
            lines.append(f"N {k} {tree.attr[k]} {_g17(tree.threshold[k])} {tree.left[k]} {tree.right[k]}")
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> RegressionTree:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 4 or lines[0][:2] != ["dtree", "v1"]:
        raise FormatError("missing 'dtree v1 <n_nodes> <arity>' header")
    try:
        n, arity = int(lines[0][2]), int(lines[0][3])
    except ValueError:
        raise FormatError("malformed tree header") from None
    if n < 1 or arity < 1 or len(lines) - 1 != n:
        raise FormatError("node count does not match the header")
    attr = np.full(n, -2)
    thr = np.zeros(n)
    left = np.full(n, -1)
    right = np.full(n, -1)
    val = np.zeros(n)
    try:
        for parts in lines[1:]:
            k = int(parts[1])
            if not 0 <= k < n or attr[k] != -2:
                raise FormatError(f"bad or repeated node id {parts[1]}")
            if parts[0] == "N" and len(parts) == 6:
                attr[k], thr[k] = int(parts[2]), float(parts[3])
                left[k], right[k] = int(parts[4]), int(parts[5])
                if attr[k] < 0:
                    raise FormatError("negative attribute index")
            elif parts[0] == "L" and len(parts) == 3:
                attr[k], val[k] = -1, float(parts[2])
            else:
                raise FormatError(f"malformed node line {' '.join(parts)!r}")
    except (ValueError, IndexError):
        raise FormatError("malformed node line") from None
    try:
        return RegressionTree(attr, thr, left, right, val, arity)
    except DomainError as exc:
        raise FormatError(str(exc)) from None


def write_tree(tree: RegressionTree, path):
    with open(path, "w") as fh:
        fh.write(format_tree(tree))


def read_tree(path) -> RegressionTree:
    with open(path) as fh:
        return parse_tree(fh.read())


# ---- CSV reports ----

BENCH_COLUMNS = ("image", "algorithm", "cpsnr_db", "scielab", "wall_seconds")
EVAL_COLUMNS = ("image", "cpsnr_db", "scielab", "mse_r", "mse_g", "mse_b")
TOY_COLUMNS = ("site", "channel", "sample", "l_true", "theta_true", "l_hat", "theta_hat")


@dataclass(frozen=True)
class BenchRow:
    image: str
    algorithm: str
    cpsnr_db: float
    scielab: float
    wall_seconds: float = float("nan")


def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _parse_num(s):
    return float(s) if s.strip() else float("nan")


def bench_totals(rows):
    """Per-algorithm TOTAL (column sums) and MEAN rows, in first-seen algorithm order."""
    out = []
    algos = list(dict.fromkeys(r.algorithm for r in rows))
    for a in algos:
        sel = [r for r in rows if r.algorithm == a]
        sums = [math.fsum(getattr(r, c) for r in sel) for c in ("cpsnr_db", "scielab", "wall_seconds")]
        out.append(BenchRow("TOTAL", a, *sums))
        out.append(BenchRow("MEAN", a, *(s / len(sel) for s in sums)))
    return out


def write_bench_csv(rows, path, totals=True):
    rows = list(rows)
    if totals:
        rows = rows + bench_totals(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.image, r.algorithm, _num(r.cpsnr_db), _num(r.scielab), _num(r.wall_seconds)])


def read_bench_csv(path, include_totals=False):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if tuple(header or ()) != BENCH_COLUMNS:
            raise FormatError(f"unexpected bench header {header}")
        rows = []
        for rec in rd:
            if len(rec) != len(BENCH_COLUMNS):
                raise FormatError("bench row has the wrong number of fields")
            row = BenchRow(rec[0], rec[1], *(_parse_num(x) for x in rec[2:]))
            if include_totals or row.image not in ("TOTAL", "MEAN"):
                rows.append(row)
        return rows


def reference_scores():
    """Published per-image scores of the original method and its comparison."""
    from importlib import resources
    p = resources.files("emdemosaic").joinpath("data/reference_scores.csv")
    with resources.as_file(p) as f:
        return read_bench_csv(f)


def write_eval_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for r in reports:
            w.writerow([r.image_id, _num(r.psnr_db), _num(r.scielab_mean), _num(r.mse_r),
                        _num(r.mse_g), _num(r.mse_b)])


def write_toy_csv(path, samples, l_true, theta_true, l_hat, theta_hat):
    n = len(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOY_COLUMNS)
        for j in range(n):
            w.writerow([j, "G" if j % 2 == 0 else "R", _num(samples[j]), _num(l_true[j]),
                        _num(theta_true[j]), _num(l_hat[j]), _num(theta_hat[j])])


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        fh.write(manifest.text())
