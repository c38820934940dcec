"""Core exam and annotation records."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

DISCS = ("D1", "D2", "D3", "D4", "D5")
VERTEBRAE = ("V1", "V2", "V3", "V4", "V5")
STRUCTURES = DISCS + VERTEBRAE


class Label(int, Enum):
    NORMAL = 0
    DEGENERATIVE = 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown label {value!r}") from None
        return cls(int(value))

    @property
    def title(self) -> str:
        return self.name.capitalize()


class DataError(ValueError):
    """Base class for malformed exam data."""


class MissingSpacing(DataError):
    pass


class BadAnnotationCount(DataError):
    pass


class DuplicateStructure(DataError):
    pass


class CorruptSlice(DataError):
    pass


@dataclass
class ExamRecord:
    exam_id: str
    slices: np.ndarray  # (n_total, H, W) float32
    pixel_spacing: Tuple[float, float]
    slice_interval: float
    middle_index: int

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=np.float32)
        if self.slices.ndim != 3:
            raise DataError(f"slices must be (n, H, W), got shape {self.slices.shape}")
        n = self.slices.shape[0]
        if n < 7:
            raise DataError(f"exam {self.exam_id} has {n} slices, need at least 7")
        if not 0 <= self.middle_index < n:
            raise DataError(f"middle_index {self.middle_index} out of range for {n} slices")
        self.pixel_spacing = (float(self.pixel_spacing[0]), float(self.pixel_spacing[1]))
        if min(self.pixel_spacing) <= 0:
            raise DataError(f"pixel spacing must be positive, got {self.pixel_spacing}")
        if self.slice_interval <= 0:
            raise DataError(f"slice interval must be positive, got {self.slice_interval}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.slices.shape[1], self.slices.shape[2]

    @property
    def n_total(self) -> int:
        return self.slices.shape[0]


@dataclass(frozen=True)
class KeypointAnnotation:
    structure: str
    position: Tuple[float, float]  # (row, col), origin at the center of pixel (0, 0)
    label: Label
    valid: bool = True  # False once an augmentation moves the point out of frame

    @property
    def branch(self) -> str:
        return "disc" if self.structure.startswith("D") else "vertebra"


@dataclass
class ExamAnnotation:
    exam_id: str
    keypoints: List[KeypointAnnotation] = field(default_factory=list)

    def validate(self, shape: Optional[Tuple[int, int]] = None) -> "ExamAnnotation":
        if len(self.keypoints) != len(STRUCTURES):
            raise BadAnnotationCount(
                f"exam {self.exam_id}: expected {len(STRUCTURES)} keypoints, got {len(self.keypoints)}"
            )
        names = [kp.structure for kp in self.keypoints]
        unknown = set(names) - set(STRUCTURES)
        if unknown:
            raise DataError(f"exam {self.exam_id}: unknown structures {sorted(unknown)}")
        if len(set(names)) != len(names):
            raise DuplicateStructure(f"exam {self.exam_id}: duplicate structure labels in {names}")
        for group in (DISCS, VERTEBRAE):
            rows = [self[s].position[0] for s in group]
            if any(b <= a for a, b in zip(rows, rows[1:])):
                raise DataError(f"exam {self.exam_id}: {group[0][0]} rows not increasing top to bottom")
        if shape is not None:
            h, w = shape
            for kp in self.keypoints:
                r, c = kp.position
                if not (0 <= r <= h - 1 and 0 <= c <= w - 1):
                    raise DataError(f"exam {self.exam_id}: {kp.structure} at {kp.position} outside {shape}")
        return self

    def __getitem__(self, structure: str) -> KeypointAnnotation:
        for kp in self.keypoints:
            if kp.structure == structure:
                return kp
        raise KeyError(structure)

    def branch(self, name: str) -> List[KeypointAnnotation]:
        return [kp for kp in self.keypoints if kp.branch == name]

    def map_positions(self, fn, bounds: Optional[Tuple[int, int]] = None) -> "ExamAnnotation":
        """Apply ``fn(row, col) -> (row, col)`` to every keypoint.

        With ``bounds`` given, points landing outside ``[0, H-1] x [0, W-1]``
        are kept but flagged invalid.
        """
        out = []
        for kp in self.keypoints:
            r, c = fn(*kp.position)
            valid = kp.valid
            if bounds is not None:
                valid = valid and 0 <= r <= bounds[0] - 1 and 0 <= c <= bounds[1] - 1
            out.append(replace(kp, position=(float(r), float(c)), valid=valid))
        return ExamAnnotation(self.exam_id, out)


def sorted_keypoints(keypoints: Sequence[KeypointAnnotation]) -> List[KeypointAnnotation]:
    order = {s: i for i, s in enumerate(STRUCTURES)}
    return sorted(keypoints, key=lambda kp: order[kp.structure])
