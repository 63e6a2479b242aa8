"""Figure rendering for the experiment runners.

Matplotlib with the Agg backend; every function writes one or more PNGs next
to the CSVs and returns the file names it created. The CSVs remain the
machine-readable contract — these plots exist for eyeballing a run.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from pathlib import Path  # noqa: E402

__all__ = [
    "recovery3d_figure",
    "dualpoly2d_figure",
    "localization_figure",
    "fusion_figure",
]


def _split(rows, kind):
    return [r for r in rows if r["kind"] == kind]


def recovery3d_figure(rows, out_dir, name="recovery3d.png"):
    """Scatter true vs. estimated triples in the (tau, nu) and (tau, theta)
    planes; marker size tracks per-atom power."""
    true_rows = _split(rows, "true")
    est_rows = _split(rows, "estimate")
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for ax, ycoord in zip(axes, ("nu", "theta")):
        ax.scatter([r["tau"] for r in true_rows],
                   [r[ycoord] for r in true_rows],
                   s=[60 * r["power"] + 20 for r in true_rows],
                   facecolors="none", edgecolors="tab:blue", label="true")
        ax.scatter([r["tau"] for r in est_rows],
                   [r[ycoord] for r in est_rows],
                   s=[20 * r["power"] + 6 for r in est_rows],
                   marker="x", color="tab:red", label="estimate")
        ax.set_xlabel("tau")
        ax.set_ylabel(ycoord)
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="upper right", fontsize=8)
    fig.suptitle("continuous parameter recovery")
    fig.tight_layout()
    fig.savefig(Path(out_dir) / name, dpi=110)
    plt.close(fig)
    return [name]


def dualpoly2d_figure(grid, truths, estimates, out_dir, name):
    """Heatmap of the dual-polynomial magnitude over the (tau, nu) face with
    true atoms circled and detected peaks crossed."""
    face = grid.values.reshape(grid.resolutions)[:, :, 0]
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(face.T, origin="lower", aspect="auto",
                   extent=(0.0, 1.0, 0.0, 1.0), cmap="viridis")
    fig.colorbar(im, ax=ax, label="|g|")
    if truths:
        ax.scatter([z[0] for z in truths], [z[1] for z in truths], s=90,
                   facecolors="none", edgecolors="w", label="true")
    if estimates:
        ax.scatter([z[0] for z in estimates], [z[1] for z in estimates],
                   marker="x", color="tab:red", label="peak")
    ax.set_xlabel("tau")
    ax.set_ylabel("nu")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(out_dir) / name, dpi=110)
    plt.close(fig)
    return [name]


def localization_figure(summary_rows, out_dir, name="localization_mae.png"):
    """Distance MAE against the number of collaborating users."""
    rows = sorted(summary_rows, key=lambda r: r["R"])
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot([r["R"] for r in rows], [r["mae_m"] for r in rows],
            marker="o", color="tab:blue")
    ax.set_xlabel("number of users R")
    ax.set_ylabel("distance MAE [m]")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(out_dir) / name, dpi=110)
    plt.close(fig)
    return [name]


def fusion_figure(summary_rows, out_dir, name="fusion_summary.png"):
    """Per-method grouped bars: angle MAE on the left, symbol error rate on
    the right."""
    methods = [r["method"] for r in summary_rows]
    x = np.arange(len(methods))
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.8))
    axes[0].bar(x, [r["aoa_mae"] for r in summary_rows], color="tab:blue")
    axes[0].set_ylabel("AoA MAE")
    axes[1].bar(x, [r["ser_mean"] for r in summary_rows], color="tab:red")
    axes[1].set_ylabel("SER")
    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(out_dir) / name, dpi=110)
    plt.close(fig)
    return [name]
