"""On-disk exam format.

An exam directory looks like::

    exam_<id>/
        slice_000.png ... slice_NNN.png   16-bit grayscale
        meta.json         {"pixel_spacing": [r, c], "slice_interval": s, "middle_index": m}
        annotation.json   {"keypoints": [{"structure", "row", "col", "label"}, ...]}
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .records import (
    BadAnnotationCount,
    CorruptSlice,
    DataError,
    ExamAnnotation,
    ExamRecord,
    KeypointAnnotation,
    Label,
    MissingSpacing,
    sorted_keypoints,
)

EXAM_PREFIX = "exam_"


def _read_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing {path.name} in {path.parent}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None


def _read_slice(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise CorruptSlice(f"cannot read {path}: {exc}") from None
    if arr.ndim != 2:
        raise CorruptSlice(f"{path} is not single-channel (shape {arr.shape})")
    return arr.astype(np.float32)


def load_exam(path) -> Tuple[ExamRecord, ExamAnnotation]:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    exam_id = path.name[len(EXAM_PREFIX):] if path.name.startswith(EXAM_PREFIX) else path.name

    meta = _read_json(path / "meta.json")
    spacing = meta.get("pixel_spacing")
    if spacing is None:
        raise MissingSpacing(f"{path / 'meta.json'} has no pixel_spacing")
    if len(spacing) != 2:
        raise MissingSpacing(f"pixel_spacing must have two components, got {spacing}")
    for key in ("slice_interval", "middle_index"):
        if key not in meta:
            raise DataError(f"{path / 'meta.json'} has no {key}")

    files = sorted(path.glob("slice_*.png"))
    if not files:
        raise CorruptSlice(f"no slice images in {path}")
    slices = [_read_slice(f) for f in files]
    if len({s.shape for s in slices}) != 1:
        raise CorruptSlice(f"slices in {path} differ in size")

    exam = ExamRecord(
        exam_id=exam_id,
        slices=np.stack(slices),
        pixel_spacing=tuple(spacing),
        slice_interval=float(meta["slice_interval"]),
        middle_index=int(meta["middle_index"]),
    )

    raw = _read_json(path / "annotation.json").get("keypoints")
    if not isinstance(raw, list):
        raise BadAnnotationCount(f"{path / 'annotation.json'} has no keypoint list")
    try:
        keypoints = [
            KeypointAnnotation(
                structure=str(k["structure"]),
                position=(float(k["row"]), float(k["col"])),
                label=Label.parse(k["label"]),
            )
            for k in raw
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed keypoint in {path / 'annotation.json'}: {exc}") from None
    annotation = ExamAnnotation(exam_id, keypoints).validate(exam.shape)
    return exam, annotation


def save_exam(root, exam: ExamRecord, annotation: ExamAnnotation) -> Path:
    """Write an exam in the canonical layout. Intensities are rounded into uint16."""
    out = Path(root) / f"{EXAM_PREFIX}{exam.exam_id}"
    out.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(exam.slices), 0, 65535).astype(np.uint16)
    for i, sl in enumerate(data):
        Image.fromarray(sl).save(out / f"slice_{i:03d}.png", optimize=False)
    meta = {
        "pixel_spacing": list(exam.pixel_spacing),
        "slice_interval": exam.slice_interval,
        "middle_index": exam.middle_index,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    kps = [
        {"structure": kp.structure, "row": kp.position[0], "col": kp.position[1], "label": kp.label.title}
        for kp in sorted_keypoints(annotation.keypoints)
    ]
    with open(out / "annotation.json", "w") as fh:
        json.dump({"keypoints": kps}, fh, indent=2)
    return out


def list_exams(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith(EXAM_PREFIX))


def split_dataset(ids: Sequence[str], train_fraction: float, rng_seed: int) -> Tuple[List[str], List[str]]:
    """Deterministic shuffled split; both sides are non-empty when there are 2+ ids."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot split an empty id list")
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(math.floor(len(ids) * train_fraction + 1e-9))
    if len(ids) > 1:
        n_train = min(max(n_train, 1), len(ids) - 1)
    order = np.random.default_rng(rng_seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def is_writable_dir(path) -> bool:
    """True when ``path`` is (or can be created as) a directory we may write into."""
    path = Path(path)
    while not path.exists():
        path = path.parent
    return path.is_dir() and os.access(path, os.W_OK)
