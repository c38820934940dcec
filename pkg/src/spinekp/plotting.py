"""PNG figures: PCK curves, loss curves and detection overlays."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_pck_curves(reports: Sequence[dict], path, labels: Optional[Sequence[str]] = None) -> Path:
    if not reports:
        raise ValueError("no reports to plot")
    fig, ax = plt.subplots(figsize=(5, 4), dpi=100)
    for i, rep in enumerate(reports):
        curve = rep.get("pck_curve")
        if not curve:
            raise ValueError("report has no PCK curve")
        t = [row["threshold_mm"] for row in curve]
        ax.plot(t, [row["all"] for row in curve], marker="o", label=labels[i] if labels else f"run {i}")
    ax.set_xlabel("threshold (mm)")
    ax.set_ylabel("PCK")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if len(reports) > 1 or labels:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_loss_curve(log_path, path) -> Path:
    with open(log_path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{log_path} is empty")
    keys = [k for k in ("disc_heatmap", "disc_offset", "vert_heatmap", "vert_offset", "total") if k in rows[0]]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for k in keys:
        ax.plot(x, [r[k] for r in rows], label=k)
    ax.set_yscale("log")
    ax.set_xlabel("epoch" if "step" not in rows[0] else "step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def overlay(image: np.ndarray, detections: Sequence[dict], ground_truth=(), path="overlay.png") -> Path:
    """Middle slice with predicted (red) and annotated (green) centroids."""
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    ax.imshow(image, cmap="gray")
    if ground_truth:
        gt = np.array([kp.position for kp in ground_truth])
        ax.scatter(gt[:, 1], gt[:, 0], s=18, c="lime", marker="o", label="annotation")
    if detections:
        det = np.array([[d["row"], d["col"]] for d in detections])
        ax.scatter(det[:, 1], det[:, 0], s=18, c="red", marker="x", label="detection")
        for d in detections:
            ax.annotate(d["label"][0], (d["col"] + 3, d["row"]), color="yellow", fontsize=7)
    ax.set_axis_off()
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
