"""Hough voting over heatmap + offset predictions and top-k keypoint selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .data.records import Label


@dataclass(frozen=True)
class DetectedKeypoint:
    branch: str
    position: tuple  # (row, col) on the decoding grid
    label: Label
    score: float

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "row": float(self.position[0]),
            "col": float(self.position[1]),
            "label": self.label.title,
            "score": float(self.score),
        }


def hough_vote(heatmap: np.ndarray, offset: np.ndarray, radius_px: float) -> np.ndarray:
    """Splat each pixel's probability / (pi R^2) bilinearly at ``x + offset(x)``.

    heatmap: (C, H, W); offset: (2C, H, W) as (row, col) pairs per class.
    Votes that fall off the grid are dropped corner by corner.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    C, H, W = heatmap.shape
    if offset.shape != (2 * C, H, W):
        raise ValueError(f"offset shape {offset.shape} does not match heatmap {heatmap.shape}")
    norm = 1.0 / (np.pi * radius_px ** 2)
    rows, cols = np.mgrid[0:H, 0:W]
    scores = np.zeros((C, H * W))
    for c in range(C):
        p = heatmap[c].ravel() * norm
        keep = p != 0
        if not keep.any():
            continue
        tr = (rows + offset[2 * c]).ravel()[keep]
        tc = (cols + offset[2 * c + 1]).ravel()[keep]
        p = p[keep]
        r0, c0 = np.floor(tr), np.floor(tc)
        fr, fc = tr - r0, tc - c0
        r0, c0 = r0.astype(np.int64), c0.astype(np.int64)
        for dr, dc, wgt in (
            (0, 0, (1 - fr) * (1 - fc)),
            (0, 1, (1 - fr) * fc),
            (1, 0, fr * (1 - fc)),
            (1, 1, fr * fc),
        ):
            rr, cc = r0 + dr, c0 + dc
            ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            scores[c] += np.bincount(rr[ok] * W + cc[ok], weights=(p * wgt)[ok], minlength=H * W)
    return scores.reshape(C, H, W)


def _refine(collapsed: np.ndarray, r: int, c: int):
    """Score-weighted centroid of the 3x3 neighbourhood around an integer peak."""
    H, W = collapsed.shape
    r0, r1, c0, c1 = max(r - 1, 0), min(r + 2, H), max(c - 1, 0), min(c + 2, W)
    patch = collapsed[r0:r1, c0:c1]
    total = patch.sum()
    if total <= 0:
        return float(r), float(c)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    return float((rr * patch).sum() / total), float((cc * patch).sum() / total)


def select_top_keypoints(
    score_map: np.ndarray,
    k: int = 5,
    suppression_px: float = 6.0,
    branch: str = "disc",
    refine: bool = True,
) -> List[DetectedKeypoint]:
    """Greedy top-k over the class-collapsed score map.

    Classes collapse by pixelwise max (ties go to Normal). Each pick suppresses
    everything within ``suppression_px`` of it; equal scores resolve in row-major
    order. Stops early when no positive score is left.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    score_map = np.asarray(score_map, dtype=np.float64)
    labels = np.argmax(score_map, axis=0)  # first max wins, so ties -> channel 0
    collapsed = score_map.max(axis=0)
    work = collapsed.copy()
    H, W = collapsed.shape
    rows, cols = np.mgrid[0:H, 0:W]
    found = []
    for _ in range(k):
        idx = int(np.argmax(work))
        r, c = divmod(idx, W)
        score = work[r, c]
        if score <= 0:
            break
        pos = _refine(collapsed, r, c) if refine else (float(r), float(c))
        found.append(DetectedKeypoint(branch, pos, Label(int(labels[r, c])), float(score)))
        work[(rows - r) ** 2 + (cols - c) ** 2 <= suppression_px ** 2] = 0.0
    return found


def decode_branch(heatmap, offset, radius_px: float, branch: str, k: int = 5, suppression_px=None):
    scores = hough_vote(heatmap, offset, radius_px)
    return select_top_keypoints(
        scores, k=k, suppression_px=radius_px if suppression_px is None else suppression_px, branch=branch
    )
