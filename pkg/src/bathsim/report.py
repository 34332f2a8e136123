"""Report artifacts: deterministic JSON/CSV writers and matplotlib figures.

Figures are rendered headless to PNG next to the delimited output. The PNG
date metadata is stripped so reruns with the same seed produce identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .limb import CELL_DRY, CELL_SOAPY, CELL_WET
from .perception import CLASS_NAMES

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Date": None}}


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def save_force_trace(path, log_array: np.ndarray, columns: list) -> Path:
    t = log_array[:, columns.index("t")]
    measured = log_array[:, columns.index("fz_meas")]
    desired = log_array[:, columns.index("fz_des")]
    normal = log_array[:, columns.index("f_normal")]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.plot(t, measured, lw=0.6, label="measured $f_z$")
    ax1.plot(t, desired, lw=1.0, ls="--", label="desired $f_z$")
    ax1.set_ylabel("force z [N]")
    ax1.legend(loc="lower right", fontsize=8)
    ax2.plot(t, normal, lw=0.6, color="tab:red")
    ax2.set_ylabel("contact normal [N]")
    ax2.set_xlabel("time [s]")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)


def save_tracking_trace(path, log_array: np.ndarray, columns: list) -> Path:
    t = log_array[:, columns.index("t")]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(t, log_array[:, columns.index("z")], lw=0.8, label="tool z")
    ax.plot(t, log_array[:, columns.index("zd")], lw=0.8, ls="--", label="reference z")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("height [m]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)


def save_surface_map(path, surface, treated: np.ndarray | None = None) -> Path:
    """Final cell states (and treated cells) as an unrolled limb map."""
    state_colors = np.empty((*surface.state.shape, 3))
    state_colors[surface.state == CELL_DRY] = (0.87, 0.72, 0.59)
    state_colors[surface.state == CELL_SOAPY] = (0.96, 0.96, 0.92)
    state_colors[surface.state == CELL_WET] = (0.45, 0.62, 0.80)

    n_plots = 2 if treated is not None else 1
    fig, axes = plt.subplots(1, n_plots, figsize=(4.2 * n_plots, 3.6), squeeze=False)
    axes[0, 0].imshow(np.transpose(state_colors, (1, 0, 2)), origin="lower", aspect="auto")
    axes[0, 0].set_title("final fluid state")
    axes[0, 0].set_xlabel("axial cell")
    axes[0, 0].set_ylabel("circumferential cell")
    if treated is not None:
        axes[0, 1].imshow(treated.T, origin="lower", aspect="auto", cmap="Greens")
        axes[0, 1].set_title("cells treated in band")
        axes[0, 1].set_xlabel("axial cell")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)


def save_iou_bars(path, per_class: dict, miou: float) -> Path:
    names = list(CLASS_NAMES)
    values = [per_class.get(n) for n in names]
    xs = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    heights = [v if v is not None else 0.0 for v in values]
    bars = ax.bar(xs, heights, color="tab:blue")
    for bar, v in zip(bars, values):
        label = "n/a" if v is None else f"{v:.3f}"
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 0.01, label,
                ha="center", fontsize=8)
    ax.axhline(miou, color="tab:red", lw=1, ls="--", label=f"mIoU {miou:.3f}")
    ax.set_xticks(xs, names, rotation=15)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("IoU")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)
