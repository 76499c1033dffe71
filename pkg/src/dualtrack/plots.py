"""Evaluation figures; every function writes a PNG and returns its path.

All trajectories are rebased to a common start before drawing so that
curves are comparable regardless of absolute pose.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import geometry, metrics

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def _rebased_translations(traj) -> np.ndarray:
    return geometry.translations(geometry.rebase_trajectory(np.asarray(traj)))


def plot_trajectories(gt, predictions: dict, path) -> Path:
    """3D ribbon of ground truth against named predicted trajectories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    t = _rebased_translations(gt)
    ax.plot(t[:, 0], t[:, 1], t[:, 2], color="black", lw=2, label="ground truth")
    ax.scatter(*t[0], color="black", marker="o", s=30)
    for color, (name, traj) in zip(_COLORS, predictions.items()):
        p = _rebased_translations(traj)
        ax.plot(p[:, 0], p[:, 1], p[:, 2], color=color, lw=1.5, ls="--", label=name)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_zlabel("z (mm)")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_drift(gt, predictions: dict, path) -> Path:
    """Per-frame drift (mm) of each prediction against the ground truth."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for color, (name, traj) in zip(_COLORS, predictions.items()):
        series = metrics.drift_series(gt, traj)
        ax.plot(series, color=color, lw=1.5, label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("drift (mm)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def out_of_plane_displacement(traj) -> np.ndarray:
    """Motion along the probe's initial out-of-plane axis, per frame (mm).

    After rebasing, frame 0 is the identity, so the initial out-of-plane
    axis is the world z axis and the curve starts at zero.
    """
    return _rebased_translations(traj)[:, 2]


def plot_out_of_plane(gt, predictions: dict, path) -> Path:
    """Out-of-plane position curves; sign errors show as mirrored shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(out_of_plane_displacement(gt), color="black", lw=2, label="ground truth")
    for color, (name, traj) in zip(_COLORS, predictions.items()):
        ax.plot(out_of_plane_displacement(traj), color=color, lw=1.5, ls="--", label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("out-of-plane position (mm)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_bars(results: dict, metric: str, path) -> Path:
    """Bar chart of one metric across named results (e.g. ablations)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(results)
    values = [results[n][metric] for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, values, color=_COLORS[: len(names)])
    ax.set_ylabel(metric)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_volume_slices(values: np.ndarray, path, title: str = "") -> Path:
    """Central orthogonal slices of a compounded or phantom volume."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
    mids = [s // 2 for s in values.shape]
    planes = [values[mids[0], :, :], values[:, mids[1], :], values[:, :, mids[2]]]
    labels = ["x mid-slice", "y mid-slice", "z mid-slice"]
    for ax, plane, label in zip(axes, planes, labels):
        ax.imshow(plane.T, origin="lower", cmap="gray", vmin=0, vmax=1)
        ax.set_title(label, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
