"""Dense training targets: binary one-channel-per-class heatmaps and short-range offsets.

A keypoint ``y`` of class ``c`` lights up every pixel center ``x`` with
``|x - y| <= R`` in heatmap channel ``c``; at those pixels the offset channels
``(2c, 2c+1)`` hold ``y - x`` as (row, col).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .data.records import ExamAnnotation, KeypointAnnotation


class OverlapViolation(ValueError):
    """Two same-class keypoint disks share a pixel."""


@dataclass(frozen=True)
class EncodingSpec:
    radius_px: float = 6.0
    grid: Tuple[int, int] = (640, 640)
    num_classes: int = 2

    def __post_init__(self):
        if self.radius_px <= 0:
            raise ValueError(f"radius must be positive, got {self.radius_px}")
        if self.num_classes != 2:
            raise ValueError("exactly two classes (normal, degenerative) are supported")


@dataclass
class HeatmapTarget:
    values: np.ndarray  # (C, H, W) uint8 in {0, 1}


@dataclass
class OffsetTarget:
    values: np.ndarray  # (2C, H, W) float32, (row, col) per class
    mask: np.ndarray  # (C, H, W) uint8


@dataclass
class TargetMaps:
    heatmap: HeatmapTarget
    offset: OffsetTarget


Keypoint = Tuple[Tuple[float, float], int]


def _disk_window(position, radius, grid):
    """Bounding box of the disk clipped to the grid plus the row/col deltas y - x inside it."""
    h, w = grid
    r, c = position
    r0, r1 = max(int(np.ceil(r - radius)), 0), min(int(np.floor(r + radius)), h - 1)
    c0, c1 = max(int(np.ceil(c - radius)), 0), min(int(np.floor(c + radius)), w - 1)
    if r0 > r1 or c0 > c1:
        return None
    dr = r - np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
    dc = c - np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
    inside = dr * dr + dc * dc <= radius * radius
    return (slice(r0, r1 + 1), slice(c0, c1 + 1)), dr, dc, inside


def _encode(keypoints: Iterable[Keypoint], spec: EncodingSpec) -> TargetMaps:
    h, w = spec.grid
    C = spec.num_classes
    heat = np.zeros((C, h, w), dtype=np.uint8)
    offset = np.zeros((2 * C, h, w), dtype=np.float32)
    for position, cls in keypoints:
        if not 0 <= cls < C:
            raise ValueError(f"class index {cls} out of range")
        r, c = position
        if not (0 <= r <= h - 1 and 0 <= c <= w - 1):
            raise ValueError(f"keypoint {position} outside grid {spec.grid}")
        window = _disk_window(position, spec.radius_px, spec.grid)
        if window is None:
            continue
        (rs, cs), dr, dc, inside = window
        patch = heat[cls, rs, cs]
        if np.any(patch[inside]):
            raise OverlapViolation(f"disk around {position} overlaps another class-{cls} keypoint")
        patch[inside] = 1
        offset[2 * cls, rs, cs][inside] = np.broadcast_to(dr, inside.shape)[inside]
        offset[2 * cls + 1, rs, cs][inside] = np.broadcast_to(dc, inside.shape)[inside]
    return TargetMaps(HeatmapTarget(heat), OffsetTarget(offset, heat.copy()))


def encode_heatmap(keypoints: Sequence[Keypoint], spec: EncodingSpec) -> HeatmapTarget:
    return _encode(keypoints, spec).heatmap


def encode_offset(keypoints: Sequence[Keypoint], spec: EncodingSpec) -> OffsetTarget:
    return _encode(keypoints, spec).offset


def _branch_keypoints(kps: Sequence[KeypointAnnotation]):
    return [(kp.position, int(kp.label)) for kp in kps if kp.valid]


def encode_exam_targets(annotation: ExamAnnotation, spec: EncodingSpec) -> Tuple[TargetMaps, TargetMaps]:
    """(disc, vertebra) targets; keypoints flagged invalid are left out."""
    return (
        _encode(_branch_keypoints(annotation.branch("disc")), spec),
        _encode(_branch_keypoints(annotation.branch("vertebra")), spec),
    )


def stack_targets(maps: TargetMaps) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(heatmap float32, offset float32, mask float32) ready for tensors."""
    return (
        maps.heatmap.values.astype(np.float32),
        maps.offset.values,
        maps.offset.mask.astype(np.float32),
    )
