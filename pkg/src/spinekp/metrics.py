"""Detection matching, PCK, per-class precision/recall/F1 and the micro AP score.

Ratios are kept as exact fractions until they are reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .data.records import KeypointAnnotation, Label

BRANCHES = ("disc", "vertebra")
CLASSES = (Label.NORMAL, Label.DEGENERATIVE)
DEFAULT_THRESHOLDS = tuple(range(1, 11))


def to_millimeters(distance_px: float, spacing: float) -> float:
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    return distance_px * spacing


def ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MatchResult:
    pairs: List[Tuple[KeypointAnnotation, object, float]] = field(default_factory=list)
    unmatched_gt: List[KeypointAnnotation] = field(default_factory=list)
    unmatched_det: list = field(default_factory=list)

    @property
    def tp(self) -> int:
        return sum(1 for g, d, _ in self.pairs if g.label == d.label)

    @property
    def fp(self) -> int:
        return sum(1 for g, d, _ in self.pairs if g.label != d.label)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)

    def counts(self) -> ClassCounts:
        return ClassCounts(self.tp, self.fp, self.fn)

    def class_counts(self) -> Dict[Label, ClassCounts]:
        out = {c: ClassCounts() for c in CLASSES}
        for g, d, _ in self.pairs:
            if g.label == d.label:
                out[g.label].tp += 1
            else:
                out[d.label].fp += 1
                out[g.label].fn += 1
        for g in self.unmatched_gt:
            out[g.label].fn += 1
        return out


def match_detections(detections, ground_truth: Sequence[KeypointAnnotation], threshold_mm: float,
                     spacing=(1.0, 1.0)) -> MatchResult:
    """One-to-one greedy matching, nearest pair first, keeping pairs within the threshold.

    ``spacing`` is (row, col) mm per pixel of the grid both sides live on.
    """
    gts = [g for g in ground_truth if g.valid]
    sr, sc = (spacing, spacing) if np.isscalar(spacing) else spacing
    cands = []
    for gi, g in enumerate(gts):
        for di, d in enumerate(detections):
            dist = float(np.hypot((g.position[0] - d.position[0]) * sr, (g.position[1] - d.position[1]) * sc))
            cands.append((dist, gi, di))
    cands.sort()
    used_g, used_d = set(), set()
    result = MatchResult()
    for dist, gi, di in cands:
        if dist > threshold_mm:
            break
        if gi in used_g or di in used_d:
            continue
        used_g.add(gi)
        used_d.add(di)
        result.pairs.append((gts[gi], detections[di], dist))
    result.unmatched_gt = [g for i, g in enumerate(gts) if i not in used_g]
    result.unmatched_det = [d for i, d in enumerate(detections) if i not in used_d]
    return result


def pck_from_counts(c: ClassCounts) -> Fraction:
    return ratio(c.tp + c.fp, c.tp + c.fp + c.fn)


def pck(match) -> Fraction:
    counts = match.counts() if isinstance(match, MatchResult) else match
    return pck_from_counts(counts)


@dataclass(frozen=True)
class ClassScores:
    precision: Fraction
    recall: Fraction
    f1: Fraction


def class_scores(c: ClassCounts) -> ClassScores:
    p = ratio(c.tp, c.tp + c.fp)
    r = ratio(c.tp, c.tp + c.fn)
    f1 = 2 * p * r / (p + r) if p + r else Fraction(0)
    return ClassScores(p, r, f1)


def classification_metrics(per_class: Dict[Label, ClassCounts]) -> Dict[str, ClassScores]:
    """Per-class scores plus their unweighted mean under the key ``"macro"``."""
    scores = {c.title: class_scores(per_class.get(c, ClassCounts())) for c in CLASSES}
    n = len(CLASSES)
    scores["macro"] = ClassScores(
        sum((s.precision for s in scores.values()), Fraction(0)) / n,
        sum((s.recall for s in scores.values()), Fraction(0)) / n,
        sum((s.f1 for s in scores.values()), Fraction(0)) / n,
    )
    return scores


def micro_ap_score(counts: Iterable[ClassCounts]) -> Fraction:
    total = sum(counts, ClassCounts())
    return ratio(total.tp, total.tp + total.fp)


@dataclass
class ExamResult:
    """Detections and valid ground truth for one exam, both on the same grid."""

    exam_id: str
    detections: Dict[str, list]
    ground_truth: Dict[str, List[KeypointAnnotation]]
    spacing: Tuple[float, float]


def evaluate(results: Sequence[ExamResult], threshold_mm: float = 6.0,
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict:
    """Aggregate counts over exams (order independent) into a JSON-ready report."""
    report = {"threshold_mm": threshold_mm, "num_exams": len(results), "branches": {}}
    all_counts = []
    for branch in BRANCHES:
        totals = ClassCounts()
        per_class = {c: ClassCounts() for c in CLASSES}
        for res in results:
            m = match_detections(res.detections[branch], res.ground_truth[branch], threshold_mm, res.spacing)
            totals = totals + m.counts()
            for c, cc in m.class_counts().items():
                per_class[c] = per_class[c] + cc
        all_counts.append(totals)
        scores = classification_metrics(per_class)
        report["branches"][branch] = {
            "pck": float(pck_from_counts(totals)),
            "tp": totals.tp, "fp": totals.fp, "fn": totals.fn,
            "classes": _scores_dict(scores, per_class),
        }
    report["micro_ap"] = float(micro_ap_score(all_counts))
    report["macro_f1_mean"] = float(
        np.mean([report["branches"][b]["classes"]["macro"]["f1"] for b in BRANCHES])
    )
    report["pck"] = float(pck_from_counts(sum(all_counts, ClassCounts())))
    if thresholds:
        report["pck_curve"] = pck_curve(results, thresholds)
    return report


def _scores_dict(scores: Dict[str, ClassScores], per_class: Dict[Label, ClassCounts]) -> dict:
    out = {}
    for name, s in scores.items():
        row = {"precision": float(s.precision), "recall": float(s.recall), "f1": float(s.f1)}
        if name != "macro":
            c = per_class[Label[name.upper()]]
            row.update(tp=c.tp, fp=c.fp, fn=c.fn)
        out[name] = row
    return out


def pck_curve(results: Sequence[ExamResult], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> List[dict]:
    rows = []
    for t in thresholds:
        row = {"threshold_mm": float(t)}
        overall = ClassCounts()
        for branch in BRANCHES:
            c = ClassCounts()
            for res in results:
                c = c + match_detections(res.detections[branch], res.ground_truth[branch], t, res.spacing).counts()
            row[branch] = float(pck_from_counts(c))
            overall = overall + c
        row["all"] = float(pck_from_counts(overall))
        rows.append(row)
    return rows
