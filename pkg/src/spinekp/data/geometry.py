"""Slice selection, spacing alignment, augmentation and intensity normalization.

All geometric operations are axis-aligned affine maps ``new = scale * old + shift``
applied identically to every slice (bilinear, zero outside the source) and to
the keypoints.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy import ndimage

from .records import DataError, ExamAnnotation, ExamRecord


@dataclass(frozen=True)
class GeometryTransform:
    """Per-axis affine map from source pixel coordinates to canvas coordinates."""

    scale: Tuple[float, float]
    shift: Tuple[float, float]

    def forward(self, row: float, col: float) -> Tuple[float, float]:
        return (row * self.scale[0] + self.shift[0], col * self.scale[1] + self.shift[1])

    def inverse(self, row: float, col: float) -> Tuple[float, float]:
        return ((row - self.shift[0]) / self.scale[0], (col - self.shift[1]) / self.scale[1])

    def to_dict(self) -> dict:
        return {"scale": list(self.scale), "shift": list(self.shift)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryTransform":
        return cls(tuple(d["scale"]), tuple(d["shift"]))


def warp_stack(stack: np.ndarray, transform: GeometryTransform, out_shape: Tuple[int, int]) -> np.ndarray:
    """Resample every slice so that ``out[p] = in[transform.inverse(p)]``."""
    (sr, sc), (tr, tc) = transform.scale, transform.shift
    if (sr, sc, tr, tc) == (1.0, 1.0, 0.0, 0.0) and stack.shape[1:] == tuple(out_shape):
        return stack.astype(np.float32, copy=True)
    matrix = np.diag([1.0 / sr, 1.0 / sc])
    offset = np.array([-tr / sr, -tc / sc])
    out = np.empty((stack.shape[0],) + tuple(out_shape), dtype=np.float32)
    for i, sl in enumerate(stack):
        out[i] = ndimage.affine_transform(
            sl.astype(np.float64), matrix, offset=offset, output_shape=out_shape,
            order=1, mode="constant", cval=0.0,
        )
    return out


def select_middle_slices(exam: ExamRecord, n: int) -> np.ndarray:
    if n < 1 or n % 2 == 0:
        raise ValueError(f"number of slices must be odd and positive, got {n}")
    if n > exam.n_total:
        raise ValueError(f"cannot select {n} slices from an exam with {exam.n_total}")
    half = n // 2
    start = exam.middle_index - half
    # shift the window inward when the middle slice sits near either end
    start = min(max(start, 0), exam.n_total - n)
    return exam.slices[start:start + n]


def alignment_transform(shape, pixel_spacing, target_spacing: float, canvas: int, exam_id: str = "") -> GeometryTransform:
    if target_spacing <= 0:
        raise ValueError(f"target spacing must be positive, got {target_spacing}")
    h, w = shape
    scale = (pixel_spacing[0] / target_spacing, pixel_spacing[1] / target_spacing)
    if h * scale[0] > 2 * canvas or w * scale[1] > 2 * canvas:
        raise DataError(
            f"exam {exam_id}: resampled extent {h * scale[0]:.0f}x{w * scale[1]:.0f} "
            f"exceeds twice the {canvas}px canvas"
        )
    shift = (
        (canvas - 1) / 2.0 - scale[0] * (h - 1) / 2.0,
        (canvas - 1) / 2.0 - scale[1] * (w - 1) / 2.0,
    )
    return GeometryTransform(scale, shift)


def align_spacing_and_resize(
    exam: ExamRecord,
    annotation: ExamAnnotation,
    target_spacing: float,
    canvas: int,
) -> Tuple[ExamRecord, ExamAnnotation, GeometryTransform]:
    """Resample to ``target_spacing`` mm/px, then center pad or crop onto a square canvas.

    The image center maps to the canvas center, so pad/crop is symmetric.
    """
    transform = alignment_transform(exam.shape, exam.pixel_spacing, target_spacing, canvas, exam.exam_id)
    slices = warp_stack(exam.slices, transform, (canvas, canvas))
    aligned = replace(exam, slices=slices, pixel_spacing=(target_spacing, target_spacing))
    return aligned, annotation.map_positions(transform.forward, bounds=(canvas, canvas)), transform


@dataclass(frozen=True)
class AugmentationSpec:
    hflip_prob: float = 0.5
    zoom_range: Tuple[float, float] = (0.7, 1.3)
    crop_size: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.zoom_range
        if not 0.5 <= lo <= hi <= 2.0:
            raise ValueError(f"zoom_range must lie within [0.5, 2.0], got {self.zoom_range}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be a probability, got {self.hflip_prob}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be positive")


def sample_augmentation(shape: Tuple[int, int], spec: AugmentationSpec) -> GeometryTransform:
    """Draw flip, zoom about the image center, and crop offset as one affine map."""
    h, w = shape
    if spec.crop_size > min(h, w):
        raise ValueError(f"crop size {spec.crop_size} larger than image {shape}")
    rng = np.random.default_rng(spec.rng_seed)
    flip = rng.random() < spec.hflip_prob
    zoom = float(rng.uniform(*spec.zoom_range))
    top = int(rng.integers(0, h - spec.crop_size + 1))
    left = int(rng.integers(0, w - spec.crop_size + 1))
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    # flip: c -> (w-1) - c ; zoom: p -> z (p - center) + center ; crop: p -> p - offset
    col_scale = -zoom if flip else zoom
    col_shift = zoom * ((w - 1) - cc) + cc - left if flip else cc * (1 - zoom) - left
    row_shift = cr * (1 - zoom) - top
    return GeometryTransform((zoom, col_scale), (row_shift, col_shift))


def apply_augmentation(
    stack: np.ndarray, annotation: ExamAnnotation, spec: AugmentationSpec
) -> Tuple[np.ndarray, ExamAnnotation]:
    """Same random flip/zoom/crop for all slices and keypoints; cropped-out points turn invalid."""
    transform = sample_augmentation(stack.shape[1:], spec)
    out_shape = (spec.crop_size, spec.crop_size)
    return (
        warp_stack(stack, transform, out_shape),
        annotation.map_positions(transform.forward, bounds=out_shape),
    )


def normalize_intensity(stack: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the whole stack."""
    stack = stack.astype(np.float32)
    std = float(stack.std())
    return (stack - stack.mean()) / (std if std > 0 else 1.0)
