"""Segmentation scoring: confusion counts, derived ratios, threshold sweeps.

Aggregation is dataset-level over pooled pixel counts; counts (and whole
sweep curves) from disjoint images merge by addition. The road class is the
positive class throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

THRESHOLD_LEVELS = 256  # matches the u8 probability grid of the device path


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Pixel counts of a binary prediction against binary ground truth."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and truth {gt.shape} differ")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & g)),
        fp=int(np.sum(p & ~g)),
        fn=int(np.sum(~p & g)),
        tn=int(np.sum(~p & ~g)),
    )


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    fpr: float
    fnr: float
    iou: float
    degenerate: frozenset[str] = frozenset()


def _ratio(num: int | float, den: int | float, flag: str, flags: set[str]) -> float:
    if den == 0:
        flags.add(flag)
        return 0.0
    return num / den


def derive(c: ConfusionCounts) -> Metrics:
    """Standard ratios; any 0/0 is reported as 0.0 and flagged degenerate."""
    flags: set[str] = set()
    precision = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    f1 = _ratio(2.0 * precision * recall, precision + recall, "f1", flags)
    fpr = _ratio(c.fp, c.fp + c.tn, "fpr", flags)
    fnr = _ratio(c.fn, c.tp + c.fn, "fnr", flags)
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, "iou", flags)
    return Metrics(precision, recall, f1, fpr, fnr, iou, frozenset(flags))


@dataclass(frozen=True)
class PRCurve:
    """Confusion counts at the 256 thresholds k/256, k = 0..255 (strict >)."""

    counts: tuple[ConfusionCounts, ...]

    def __post_init__(self) -> None:
        if len(self.counts) != THRESHOLD_LEVELS:
            raise ValueError(f"curve needs {THRESHOLD_LEVELS} threshold points")

    @property
    def thresholds(self) -> np.ndarray:
        return np.arange(THRESHOLD_LEVELS) / THRESHOLD_LEVELS

    def __add__(self, other: "PRCurve") -> "PRCurve":
        return PRCurve(tuple(a + b for a, b in zip(self.counts, other.counts)))


def _bin_index(prob: np.ndarray) -> np.ndarray:
    """Number of thresholds each pixel clears: p > k/256 for k < ceil(256p)."""
    return np.clip(np.ceil(prob * THRESHOLD_LEVELS), 0, THRESHOLD_LEVELS).astype(np.int64)


def sweep(prob: np.ndarray, gt: np.ndarray) -> PRCurve:
    """Confusion counts at every threshold via one histogram pass."""
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt)
    if prob.shape != gt.shape:
        raise ValueError(f"probabilities {prob.shape} and truth {gt.shape} differ")
    if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    g = gt.astype(bool).ravel()
    bins = _bin_index(prob.ravel())
    # pixel predicted positive at threshold k iff its bin index exceeds k
    pos_hist = np.bincount(bins[g], minlength=THRESHOLD_LEVELS + 1)
    neg_hist = np.bincount(bins[~g], minlength=THRESHOLD_LEVELS + 1)
    tp_suffix = np.cumsum(pos_hist[::-1])[::-1]  # sum of hist[b] for b >= k
    fp_suffix = np.cumsum(neg_hist[::-1])[::-1]
    n_pos = int(pos_hist.sum())
    n_neg = int(neg_hist.sum())
    counts = []
    for k in range(THRESHOLD_LEVELS):
        tp = int(tp_suffix[k + 1])
        fp = int(fp_suffix[k + 1])
        counts.append(ConfusionCounts(tp, fp, n_pos - tp, n_neg - fp))
    return PRCurve(tuple(counts))


def maxf(curve: PRCurve) -> float:
    return max(derive(c).f1 for c in curve.counts)


def avg_precision(curve: PRCurve) -> float:
    """Trapezoid area under the P-R polyline, sorted by recall and anchored
    at (0, precision of the lowest-recall point)."""
    points = [(derive(c).recall, derive(c).precision) for c in curve.counts]
    points.sort(key=lambda rp: rp[0])
    anchored = [(0.0, points[0][1])] + points
    area = 0.0
    for (r0, p0), (r1, p1) in zip(anchored, anchored[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def pool(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total


def pool_curves(curves: Iterable[PRCurve]) -> PRCurve:
    merged: PRCurve | None = None
    for c in curves:
        merged = c if merged is None else merged + c
    if merged is None:
        raise ValueError("need at least one curve")
    return merged
