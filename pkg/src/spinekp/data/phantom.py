"""Procedural lumbar-spine phantoms with known centroids and labels.

A phantom is a slightly tilted and curved column of five rectangular vertebrae
(V1 on top) alternating with five bright elliptical discs, a bright canal strip
behind it, and a smooth noisy background. Degenerative structures are drawn
flatter and darker. Lateral slices show the same anatomy shrunk, faded and
shifted a little.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .records import DISCS, VERTEBRAE, ExamAnnotation, ExamRecord, KeypointAnnotation, Label

BACKGROUND_MEAN = 300.0
BACKGROUND_STD = 40.0
DISC_INTENSITY = 2000.0
VERTEBRA_INTENSITY = 1200.0
CANAL_INTENSITY = 1600.0


@dataclass(frozen=True)
class PhantomSpec:
    count: int = 200
    image_size: int = 160
    degenerative_rate: float = 0.3
    jitter: float = 1.0
    rng_seed: int = 0
    pixel_spacing: float = 1.3125
    spacing_jitter: float = 0.0  # relative spread of the per-exam pixel spacing
    slice_interval: float = 4.5

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError(f"phantom count must be positive, got {self.count}")
        if not 0.0 <= self.degenerative_rate <= 1.0:
            raise ValueError(f"degenerative_rate must be in [0, 1], got {self.degenerative_rate}")
        if self.image_size < 64:
            raise ValueError("phantom image_size must be at least 64")
        if self.jitter < 0 or self.pixel_spacing <= 0:
            raise ValueError("jitter must be non-negative and pixel_spacing positive")


@dataclass
class _Structure:
    name: str
    center: Tuple[float, float]
    height: float
    width: float
    label: Label


@dataclass
class PhantomLayout:
    size: int
    spacing: float
    n_slices: int
    angle: float  # column tilt, radians
    structures: List[_Structure]
    canal_offset: float

    def annotation(self, exam_id: str = "layout") -> ExamAnnotation:
        keypoints = [
            KeypointAnnotation(s.name, (float(s.center[0]), float(s.center[1])), s.label)
            for s in self.structures
        ]
        return ExamAnnotation(exam_id, keypoints).validate((self.size, self.size))


def _rng(spec: PhantomSpec, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.rng_seed, index])


def sample_layout(spec: PhantomSpec, index: int) -> PhantomLayout:
    """Geometry and labels only; cheap enough for large statistical checks."""
    if not 0 <= index < spec.count:
        raise IndexError(f"phantom index {index} out of range for count {spec.count}")
    rng = _rng(spec, index)
    size = spec.image_size
    j = spec.jitter
    spacing = spec.pixel_spacing * (1.0 + spec.spacing_jitter * rng.uniform(-1, 1))
    n_slices = int(rng.integers(7, 12))

    period = size * 0.15 * (1.0 + 0.06 * j * rng.uniform(-1, 1))
    vert_h, disc_h = 0.64 * period, 0.36 * period
    vert_w, disc_w = size * 0.2, size * 0.19
    angle = np.deg2rad(8.0 * j * rng.uniform(-1, 1))
    bow = size * 0.03 * j * rng.uniform(-1, 1)
    top = size * 0.5 - 2.25 * period + size * 0.04 * j * rng.uniform(-1, 1)
    center_col = size * 0.5 + size * 0.06 * j * rng.uniform(-1, 1)

    structures = []
    along = 0.0
    names = [n for pair in zip(VERTEBRAE, DISCS) for n in pair]  # V1, D1, V2, D2, ...
    for k, name in enumerate(names):
        is_disc = name.startswith("D")
        h = disc_h if is_disc else vert_h
        if k:
            prev_h = vert_h if is_disc else disc_h
            along += (h + prev_h) / 2.0 + 0.3 * j * rng.uniform(-1, 1)
        t = along / (4.5 * period)
        dr = along * np.cos(angle)
        dc = along * np.sin(angle) + bow * np.sin(np.pi * t)
        label = Label.DEGENERATIVE if rng.random() < spec.degenerative_rate else Label.NORMAL
        structures.append(
            _Structure(
                name=name,
                center=(top + dr, center_col + dc),
                height=h,
                width=(disc_w if is_disc else vert_w) * (1.0 + 0.05 * j * rng.uniform(-1, 1)),
                label=label,
            )
        )
    return PhantomLayout(size, spacing, n_slices, angle, structures, canal_offset=0.75 * vert_w)


def _soft_inside(dist: np.ndarray) -> np.ndarray:
    # antialiased edge: 1 inside, 0 outside, linear over one pixel
    return np.clip(0.5 - dist, 0.0, 1.0)


def _render_slice(layout: PhantomLayout, rng: np.random.Generator, lateral: float, shift: Tuple[float, float]) -> np.ndarray:
    size = layout.size
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    ca, sa = np.cos(layout.angle), np.sin(layout.angle)
    fade = 1.0 - 0.12 * lateral
    shrink = max(1.0 - 0.08 * lateral, 0.5)

    smooth = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), sigma=size / 16.0)
    smooth *= 0.5 * BACKGROUND_STD / (smooth.std() + 1e-12)
    img = BACKGROUND_MEAN + smooth + rng.normal(0.0, np.sqrt(0.75) * BACKGROUND_STD, (size, size))

    # canal: bright strip behind each structure
    for s in layout.structures:
        r0, c0 = s.center[0] + shift[0], s.center[1] + shift[1]
        u = (rows - r0) * ca + (cols - c0) * sa
        v = -(rows - r0) * sa + (cols - c0) * ca
        canal = _soft_inside(np.abs(v - layout.canal_offset) - 0.03 * size) * _soft_inside(np.abs(u) - s.height)
        img = np.maximum(img, BACKGROUND_MEAN + (CANAL_INTENSITY - BACKGROUND_MEAN) * fade * canal)

    for s in layout.structures:
        degenerate = s.label is Label.DEGENERATIVE
        r0, c0 = s.center[0] + shift[0], s.center[1] + shift[1]
        u = (rows - r0) * ca + (cols - c0) * sa
        v = -(rows - r0) * sa + (cols - c0) * ca
        half_w = 0.5 * s.width * shrink
        if s.name.startswith("D"):
            half_h = 0.5 * s.height * (0.5 if degenerate else 1.0) * shrink
            level = DISC_INTENSITY * (0.5 if degenerate else 1.0)
            rad = np.sqrt((u / half_h) ** 2 + (v / half_w) ** 2)
            mask = _soft_inside((rad - 1.0) * min(half_h, half_w))
        else:
            half_h = 0.5 * s.height * (0.72 if degenerate else 1.0) * shrink
            level = VERTEBRA_INTENSITY * (0.7 if degenerate else 1.0)
            mask = _soft_inside(np.maximum(np.abs(u) - half_h, np.abs(v) - half_w))
        texture = 1.0 + 0.04 * rng.normal(size=img.shape)
        img = img * (1 - mask) + mask * level * fade * texture
    return np.clip(img, 0.0, 4095.0)


def generate_phantom_exam(spec: PhantomSpec, index: int) -> Tuple[ExamRecord, ExamAnnotation]:
    layout = sample_layout(spec, index)
    # separate stream for pixels so geometry draws stay independent of rendering
    rng = np.random.default_rng([spec.rng_seed, index, 1])
    middle = layout.n_slices // 2
    slices = []
    for i in range(layout.n_slices):
        lateral = abs(i - middle)
        shift = (0.0, 0.0) if i == middle else tuple(0.4 * spec.jitter * lateral * rng.uniform(-1, 1, 2))
        slices.append(_render_slice(layout, rng, lateral, shift))
    exam_id = f"{spec.rng_seed:04d}_{index:05d}"
    exam = ExamRecord(
        exam_id=exam_id,
        slices=np.rint(np.stack(slices)),
        pixel_spacing=(layout.spacing, layout.spacing),
        slice_interval=spec.slice_interval,
        middle_index=middle,
    )
    return exam, layout.annotation(exam_id)
