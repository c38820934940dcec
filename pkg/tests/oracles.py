"""Slow, literal reference implementations used only by the tests."""
import math
from fractions import Fraction

import numpy as np


def lattice_disk(center, radius, grid):
    """Every pixel center within ``radius`` of ``center``, by brute force over the grid."""
    h, w = grid
    return {(i, j) for i in range(h) for j in range(w)
            if (i - center[0]) ** 2 + (j - center[1]) ** 2 <= radius ** 2}


def hough_literal(heatmap, offset, radius):
    """score[c, y] = sum_x p_c(x) / (pi R^2) * bilinear(x + S_c(x) - y), one output pixel at a time."""
    C, H, W = heatmap.shape
    out = np.zeros((C, H, W))
    rows, cols = np.mgrid[0:H, 0:W]
    norm = math.pi * radius ** 2
    for c in range(C):
        tr = rows + offset[2 * c]
        tc = cols + offset[2 * c + 1]
        p = heatmap[c] / norm
        for i in range(H):
            for j in range(W):
                k = np.clip(1 - np.abs(tr - i), 0, None) * np.clip(1 - np.abs(tc - j), 0, None)
                out[c, i, j] = float((p * k).sum())
    return out


def focal_literal(p, y, gamma):
    """Elementwise loop: -(1 - q)^gamma log q with q the probability of the true state."""
    total, pos = 0.0, 0
    for pi, yi in zip(np.ravel(p), np.ravel(y)):
        q = pi if yi == 1 else 1 - pi
        total += -((1 - q) ** gamma) * math.log(q)
        pos += int(yi == 1)
    return total / max(pos, 1)


def frac(n, d):
    return Fraction(n, d) if d else Fraction(0)


def hand_scores(tp, fp, fn):
    p = frac(tp, tp + fp)
    r = frac(tp, tp + fn)
    f1 = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f1


# Constructed matching scenarios on a 1 mm/px grid with a 6 mm threshold.
# Ground truth / detections are (row, col, label) with label "N" or "D".
# Expected per-class counts were worked out by hand: (tp, fp, fn).
N, D = "N", "D"
MATCH_SCENARIOS = [
    # 1 exact hit
    dict(gt=[(10, 10, N)], det=[(10, 10, N)], N=(1, 0, 0), D=(0, 0, 0)),
    # 2 hit with wrong label
    dict(gt=[(10, 10, N)], det=[(10, 12, D)], N=(0, 0, 1), D=(0, 1, 0)),
    # 3 detection 7 mm away: missed
    dict(gt=[(10, 10, N)], det=[(17, 10, N)], N=(0, 0, 1), D=(0, 0, 0)),
    # 4 exactly at the threshold counts
    dict(gt=[(10, 10, D)], det=[(16, 10, D)], N=(0, 0, 0), D=(1, 0, 0)),
    # 5 no detections at all
    dict(gt=[(10, 10, N), (30, 10, D)], det=[], N=(0, 0, 1), D=(0, 0, 1)),
    # 6 no ground truth, stray detection is ignored
    dict(gt=[], det=[(5, 5, N)], N=(0, 0, 0), D=(0, 0, 0)),
    # 7 two detections near one ground truth: nearest (wrong label) wins
    dict(gt=[(10, 10, N)], det=[(11, 10, D), (13, 10, N)], N=(0, 0, 1), D=(0, 1, 0)),
    # 8 greedy nearest-first steals a detection from a farther ground truth
    dict(gt=[(10, 10, N), (14, 10, D)], det=[(12.5, 10, D)], N=(0, 0, 1), D=(1, 0, 0)),
    # 9 five perfect detections
    dict(gt=[(10 * i, 5, N if i % 2 else D) for i in range(1, 6)],
         det=[(10 * i, 5, N if i % 2 else D) for i in range(1, 6)], N=(3, 0, 0), D=(2, 0, 0)),
    # 10 five detections all swapped labels
    dict(gt=[(10 * i, 5, N if i % 2 else D) for i in range(1, 6)],
         det=[(10 * i, 5, D if i % 2 else N) for i in range(1, 6)], N=(0, 2, 3), D=(0, 3, 2)),
    # 11 one missed, one mislabeled, three right (TP 3, FP 1, FN 1 overall)
    dict(gt=[(10, 5, N), (20, 5, N), (30, 5, N), (40, 5, D), (50, 5, D)],
         det=[(10, 6, N), (20, 4, N), (31, 5, D), (40, 5, D), (80, 5, D)], N=(2, 0, 1), D=(1, 1, 1)),
    # 12 diagonal distance sqrt(4^2 + 4^2) = 5.66 <= 6
    dict(gt=[(10, 10, D)], det=[(14, 14, D)], N=(0, 0, 0), D=(1, 0, 0)),
    # 13 diagonal distance sqrt(5^2 + 4^2) = 6.40 > 6
    dict(gt=[(10, 10, D)], det=[(15, 14, D)], N=(0, 0, 0), D=(0, 0, 1)),
    # 14 all degenerative, all correct
    dict(gt=[(10, 5, D), (30, 5, D)], det=[(10, 5, D), (30, 5, D)], N=(0, 0, 0), D=(2, 0, 0)),
    # 15 all normal, all predicted degenerative
    dict(gt=[(10, 5, N), (30, 5, N)], det=[(10, 5, D), (30, 5, D)], N=(0, 0, 2), D=(0, 2, 0)),
    # 16 one detection between two ground truths, closer to the second
    dict(gt=[(10, 10, N), (16, 10, N)], det=[(14, 10, N)], N=(1, 0, 1), D=(0, 0, 0)),
    # 17 crossing pairs resolved nearest first
    dict(gt=[(10, 10, N), (20, 10, D)], det=[(19, 10, N), (11, 10, D)], N=(0, 1, 1), D=(0, 1, 1)),
    # 18 more detections than ground truth, extras unmatched
    dict(gt=[(10, 10, N)], det=[(10, 10, N), (40, 40, D), (60, 60, N)], N=(1, 0, 0), D=(0, 0, 0)),
    # 19 the hand example: Normal 3/1/1, Degenerative 4/0/1
    dict(gt=[(10, 5, N), (20, 5, N), (30, 5, N), (40, 5, N), (50, 5, N),
             (60, 5, D), (70, 5, D), (80, 5, D), (90, 5, D), (100, 5, D)],
         det=[(10, 5, N), (20, 5, N), (30, 5, N), (40, 5, D), (60, 5, D), (70, 5, D), (80, 5, D),
              (90, 5, N)],
         N=(3, 1, 2), D=(3, 1, 2)),
    # 20 both empty
    dict(gt=[], det=[], N=(0, 0, 0), D=(0, 0, 0)),
]
