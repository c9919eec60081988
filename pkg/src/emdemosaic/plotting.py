"""Report figures rendered to image files (non-interactive backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(report_path, suffix=".png"):
    """Figure path next to a report: same stem, ``.png`` extension."""
    return os.path.splitext(str(report_path))[0] + suffix


def plot_toy1d(path, samples, theta_true, theta_hat, l_true=None, l_hat=None, title=""):
    n = len(samples)
    x = np.arange(n)
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax = axes[0]
    ax.plot(x[0::2], samples[0::2], ".", ms=3, color="tab:green", label="G samples")
    ax.plot(x[1::2], samples[1::2], ".", ms=3, color="tab:red", label="R samples")
    if l_true is not None:
        ax.plot(x, l_true, color="0.5", lw=1, label="true brightness")
    if l_hat is not None:
        ax.plot(x, l_hat, color="k", lw=1, label="estimated brightness")
    ax.set_ylabel("intensity")
    ax.legend(fontsize=7, loc="upper right")
    ax = axes[1]
    ax.plot(x, theta_true, color="0.5", lw=2, label="true angle")
    ax.plot(x, theta_hat, color="tab:blue", lw=1, label="estimated angle")
    ax.set_ylim(0, np.pi / 2)
    ax.set_xlabel("site")
    ax.set_ylabel("theta (rad)")
    ax.legend(fontsize=7, loc="upper right")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_bench(path, rows, metric="cpsnr_db"):
    rows = [r for r in rows if r.image not in ("TOTAL", "MEAN")]
    images = list(dict.fromkeys(r.image for r in rows))
    algos = list(dict.fromkeys(r.algorithm for r in rows))
    width = 0.8 / max(1, len(algos))
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(images) + 2), 3.5))
    for k, a in enumerate(algos):
        vals = {r.image: getattr(r, metric) for r in rows if r.algorithm == a}
        ax.bar(np.arange(len(images)) + k * width, [vals.get(i, np.nan) for i in images],
               width, label=a)
    ax.set_xticks(np.arange(len(images)) + 0.4 - width / 2)
    ax.set_xticklabels(images, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
