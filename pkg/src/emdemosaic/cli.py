"""Command line interface: ``emdemosaic <command> ...``."""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

import numpy as np

from . import io
from .beta import DEFAULT_CANDIDATES, label_patches, train_tree
from .core import CfaPattern, DomainError, RgbImage, mosaic_sample, toy_rgb
from .metrics import DEFAULT_PPD, evaluate_pair
from .pipeline import (EmConfig, RunManifest, balance_profile, bilinear_demosaic,
                       closed_form_constant, em_constant, em_demosaic, em_piecewise_1d,
                       export_peak, laroche_init)
from .synthetic import DEFAULT_SEGMENTS, interior_mask, parse_segments, textured_brightness

TOY_BETA0 = 100.0
ALGORITHMS = ("ours", "bilinear", "laroche")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _csv_list(text, conv=str):
    return [conv(t.strip()) for t in text.split(",") if t.strip()]


def build_parser():
    p = _Parser(prog="emdemosaic", description="EM demosaicing toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mosaic", help="sample a PPM through a CFA with noise")
    m.add_argument("input")
    m.add_argument("--pattern", default="RGGB")
    m.add_argument("--sigma", type=float, default=0.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)

    d = sub.add_parser("demosaic", help="EM demosaic a PGM mosaic")
    d.add_argument("input")
    d.add_argument("--config")
    d.add_argument("--tree")
    d.add_argument("--out", required=True)
    d.add_argument("--manifest")

    t = sub.add_parser("toy1d", help="1D toy problem (constant or piecewise color)")
    t.add_argument("--mode", choices=("constant", "piecewise"), default="piecewise")
    t.add_argument("--n", type=int, default=256)
    t.add_argument("--sigma", type=float, default=30.0)
    t.add_argument("--segments")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--beta0", type=float, default=TOY_BETA0)
    t.add_argument("--config")
    t.add_argument("--report", required=True)
    t.add_argument("--no-figure", action="store_true")

    e = sub.add_parser("evaluate", help="compare two PPM images")
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--metrics", default="cpsnr,scielab")
    e.add_argument("--ppd", type=float, default=DEFAULT_PPD)
    e.add_argument("--out", required=True)

    r = sub.add_parser("train-d", help="label patches and train the constancy-scale tree")
    r.add_argument("--patches", required=True)
    r.add_argument("--candidates", default=",".join(str(c) for c in DEFAULT_CANDIDATES))
    r.add_argument("--min-leaf", type=int, default=20)
    r.add_argument("--max-depth", type=int, default=8)
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="benchmark demosaicers on a directory of PPMs")
    b.add_argument("--dataset", required=True)
    b.add_argument("--algos", default="ours,bilinear")
    b.add_argument("--crop", type=int, default=128)
    b.add_argument("--config")
    b.add_argument("--tree")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ppd", type=float, default=DEFAULT_PPD)
    b.add_argument("--report", required=True)
    b.add_argument("--no-figure", action="store_true")
    return p


def _config(path):
    return io.read_config(path) if path else EmConfig()


def _tree_for(cfg, tree_path):
    path = tree_path or cfg.tree_path
    if path:
        return io.read_tree(path)
    return cfg.constant_d


def cmd_mosaic(a):
    raw, maxval = io.read_image_raw(a.input)
    if raw.ndim != 3:
        raise CliError(f"{a.input}: expected a color PPM")
    img = RgbImage.from_array(raw.astype(np.float64))
    frame = mosaic_sample(img, CfaPattern(a.pattern), a.sigma, a.seed, io.bit_depth_of(maxval))
    io.write_mosaic(frame, a.out)
    return f"wrote {a.out}"


def cmd_demosaic(a):
    frame = io.read_mosaic(a.input)
    cfg = _config(a.config)
    manifest = RunManifest()
    manifest.add("input", a.input)
    out = em_demosaic(frame, cfg, _tree_for(cfg, a.tree), manifest)
    io.write_image(out, a.out, 2 ** frame.bit_depth - 1, frame.black_level)
    if a.manifest:
        io.write_manifest(manifest, a.manifest)
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return f"wrote {a.out}"


def cmd_toy1d(a):
    if a.n < 4:
        raise CliError("--n must be at least 4")
    cfg = _config(a.config)
    spec = a.segments or ("0.6" if a.mode == "constant" else ",".join(map(str, DEFAULT_SEGMENTS)))
    theta = parse_segments(spec, a.n)
    l = textured_brightness(a.n, a.seed)[0]
    if a.mode == "constant":
        if len(np.unique(theta)) != 1:
            raise CliError("constant mode takes a single segment")
        l = balance_profile(l)
    frame = mosaic_sample(toy_rgb(l, theta), None, a.sigma, seed=a.seed + 1)
    if a.mode == "constant":
        res = em_constant(frame, cfg)
        closed = closed_form_constant(frame)
        summary = (f"mode=constant theta_hat={float(res.theta[0])!r} closed_form={closed!r} "
                   f"theta_true={float(theta[0])!r} iterations={res.iterations}")
    else:
        res = em_piecewise_1d(frame, cfg, beta0=a.beta0)
        m = interior_mask(theta, 1)
        rms = float(np.sqrt(np.mean((res.theta - theta)[m] ** 2)))
        summary = f"mode=piecewise interior_rms={rms!r} iterations={res.iterations}"
    samples = frame.samples[0]
    io.write_toy_csv(a.report, samples, l, theta, res.l_hat, res.theta)
    if not a.no_figure:
        from .plotting import figure_path, plot_toy1d
        plot_toy1d(figure_path(a.report), samples, theta, res.theta, l, res.l_hat,
                   f"{a.mode}, n={a.n}, sigma={a.sigma:g}, seed={a.seed}")
    return summary


def cmd_evaluate(a):
    metrics = _csv_list(a.metrics)
    bad = set(metrics) - {"cpsnr", "scielab"}
    if bad or not metrics:
        raise CliError(f"unknown metrics {sorted(bad)}")
    ref_raw, ref_max = io.read_image_raw(a.ref)
    test_raw, _ = io.read_image_raw(a.test)
    ref = RgbImage.from_array(ref_raw.astype(np.float64))
    test = RgbImage.from_array(test_raw.astype(np.float64))
    rep = evaluate_pair(ref, test, os.path.splitext(os.path.basename(a.test))[0], float(ref_max),
                        a.ppd, metrics)
    io.write_eval_csv([rep], a.out)
    return f"cpsnr={rep.psnr_db!r} scielab={rep.scielab_mean!r}"


def cmd_train_d(a):
    cands = _csv_list(a.candidates, float)
    files = sorted(glob.glob(os.path.join(a.patches, "*.ppm")))
    if not files:
        raise CliError(f"no .ppm patches in {a.patches}")
    cfg = _config(a.config)
    patches = [io.read_image(f) for f in files]
    peak = float(io.read_image_raw(files[0])[1])
    sigma = cfg.sigma if isinstance(cfg.sigma, (int, float)) else None
    samples = label_patches(patches, cands, cfg, sigma=sigma, seed=a.seed, peak=peak)
    tree = train_tree(samples, a.min_leaf, a.max_depth)
    io.write_tree(tree, a.out)
    return f"wrote {a.out} ({tree.n_nodes} nodes from {len(samples)} samples)"


def center_crop(img, size):
    if size <= 0 or size >= min(img.shape):
        return img
    top = (img.height - size) // 2 // 2 * 2
    left = (img.width - size) // 2 // 2 * 2
    return img.crop(top, left, size, size)


def cmd_bench(a):
    algos = _csv_list(a.algos)
    bad = set(algos) - set(ALGORITHMS)
    if bad or not algos:
        raise CliError(f"unknown algorithms {sorted(bad)}; choose from {ALGORITHMS}")
    files = sorted(glob.glob(os.path.join(a.dataset, "*.ppm")))
    if not files:
        raise CliError(f"no .ppm images in {a.dataset}")
    cfg = _config(a.config)
    tree = _tree_for(cfg, a.tree)
    sigma = float(cfg.sigma) if isinstance(cfg.sigma, (int, float)) else 0.0
    rows = []
    for k, f in enumerate(files):
        raw, maxval = io.read_image_raw(f)
        img = center_crop(RgbImage.from_array(raw.astype(np.float64)), a.crop)
        frame = mosaic_sample(img, CfaPattern("RGGB"), sigma, a.seed + k, io.bit_depth_of(maxval))
        name = os.path.splitext(os.path.basename(f))[0]
        for algo in algos:
            t0 = time.perf_counter()
            if algo == "ours":
                out = em_demosaic(frame, cfg, tree)
            elif algo == "bilinear":
                out = bilinear_demosaic(frame)
            else:
                out = laroche_init(frame)
            wall = time.perf_counter() - t0
            out = out.clip(0.0, export_peak(frame))
            rep = evaluate_pair(img, out, name, float(maxval), a.ppd)
            rows.append(io.BenchRow(name, algo, rep.psnr_db, rep.scielab_mean, wall))
    io.write_bench_csv(rows, a.report)
    if not a.no_figure:
        from .plotting import figure_path, plot_bench
        plot_bench(figure_path(a.report), rows)
    return f"wrote {a.report} ({len(rows)} rows)"


COMMANDS = {"mosaic": cmd_mosaic, "demosaic": cmd_demosaic, "toy1d": cmd_toy1d,
            "evaluate": cmd_evaluate, "train-d": cmd_train_d, "bench": cmd_bench}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        msg = COMMANDS[args.command](args)
    except (CliError, DomainError, OSError, ValueError) as exc:
        text = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"emdemosaic: error: {text}", file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1
    if msg:
        print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
