"""Figure rendering for logs, calibration reports, and attention maps.

All figures use the Agg backend and fixed metadata so reruns on the same
input produce byte-identical files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import NoData

SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **SAVE_KW)
    plt.close(fig)
    return path


def render_loss_curves(rows: list, out_path) -> str:
    """Total and per-term loss curves from a metrics log."""
    if not rows:
        raise NoData("metrics log holds no rows")
    steps = [r["step"] for r in rows]
    keys = sorted({k for r in rows for k in r} - {"step", "lr"})
    fig, ax = plt.subplots(figsize=(8, 5))
    for key in keys:
        series = [r.get(key, np.nan) for r in rows]
        lw = 2.0 if key == "total" else 1.0
        ax.plot(steps, series, label=key, linewidth=lw)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, ncol=2)
    ax.set_title("training losses")
    fig.tight_layout()
    return _save(fig, out_path)


def render_calibration_histograms(report: dict, out_path) -> str:
    """Per-block distance histograms: c2t vs c2s vs impostor."""
    blocks = report.get("blocks", [])
    if not blocks:
        raise NoData("calibration report holds no blocks")
    lo, hi = report["hist_range"]
    n_bins = report["hist_bins"]
    centers = np.linspace(lo, hi, n_bins, endpoint=False) + (hi - lo) / (2 * n_bins)
    cols = min(4, len(blocks))
    rows_n = (len(blocks) + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(3.2 * cols, 2.6 * rows_n), squeeze=False)
    for i, block in enumerate(blocks):
        ax = axes[i // cols][i % cols]
        ax.plot(centers, block["c2t_hist"], label="c2t", color="tab:blue")
        ax.plot(centers, block["c2s_hist"], label="c2s", color="tab:orange")
        ax.plot(centers, block["neg_hist"], label="impostor", color="tab:gray")
        if block.get("margin") is not None:
            ax.axvline(block["margin"], color="tab:red", linestyle="--", linewidth=1)
        ax.set_title(f"block {block['block_index']}", fontsize=9)
        if i == 0:
            ax.legend(fontsize=7)
    for j in range(len(blocks), rows_n * cols):
        axes[j // cols][j % cols].axis("off")
    fig.tight_layout()
    return _save(fig, out_path)


def render_eer_curve(report: dict, out_path) -> str:
    """Equal error rate of c2t vs c2s per backbone block."""
    blocks = report.get("blocks", [])
    if not blocks:
        raise NoData("calibration report holds no blocks")
    xs = [b["block_index"] for b in blocks]
    ys = [b["eer"] for b in blocks]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(xs, ys, marker="o")
    ax.axhline(0.5, color="tab:gray", linestyle=":", linewidth=1)
    ax.set_xlabel("backbone block")
    ax.set_ylabel("EER (c2t vs c2s)")
    ax.set_ylim(-0.02, max(1.0, max(ys) if ys else 1.0) + 0.02)
    ax.set_title("where blocks stop separating target from source")
    fig.tight_layout()
    return _save(fig, out_path)


def render_attention_grid(npz_path, out_path) -> str:
    """Mean gating masks per fused resolution from an exported capture."""
    with np.load(npz_path) as blob:
        keys = sorted(blob.files, key=lambda k: int(k.replace("res", "")))
        if not keys:
            raise NoData(f"{npz_path} holds no attention maps")
        maps = {k: blob[k] for k in keys}
    fig, axes = plt.subplots(1, len(keys), figsize=(3.0 * len(keys), 3.2), squeeze=False)
    for i, key in enumerate(keys):
        ax = axes[0][i]
        mean_mask = maps[key].mean(axis=(0, 1))
        im = ax.imshow(mean_mask, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(key, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, out_path)


def render_calibration_report(report: dict, out_dir) -> list:
    os.makedirs(out_dir, exist_ok=True)
    return [
        render_calibration_histograms(report, os.path.join(out_dir, "distance_histograms.png")),
        render_eer_curve(report, os.path.join(out_dir, "eer_by_block.png")),
    ]
