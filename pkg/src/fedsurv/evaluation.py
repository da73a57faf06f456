"""Alarm generation and scoring.

P-value or growth-rate series become point alarms, predicted alarms are
matched to ground-truth alarms inside an asymmetric time window, and the
match counts roll up into precision/recall curves, recall at a fixed false
discovery rate, and F1.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .semisynth import PrevalenceSeries

__all__ = [
    "AlarmSeries",
    "MatchWindow",
    "MatchCounts",
    "PRPoint",
    "PRCurve",
    "alarms_from_pvalues",
    "alarms_from_growth",
    "match_alarms",
    "precision_recall",
    "pr_curve",
    "recall_at_fdr",
    "f1",
]


@dataclasses.dataclass(frozen=True)
class AlarmSeries:
    """Period indices at which an alarm fired, strictly increasing."""

    period_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        for idx in self.period_indices:
            if int(idx) != idx:
                raise DomainError(f"alarm indices must be integers, got {idx!r}")
        for a, b in zip(self.period_indices, self.period_indices[1:]):
            if b <= a:
                raise DomainError("alarm indices must be sorted and unique")

    @staticmethod
    def of(indices: Iterable[int]) -> "AlarmSeries":
        return AlarmSeries(tuple(sorted(set(int(i) for i in indices))))

    def __len__(self) -> int:
        return len(self.period_indices)


@dataclasses.dataclass(frozen=True)
class MatchWindow:
    """Tolerance around a truth alarm: `before` periods early through
    `after` periods late still count as detecting it."""

    before: int
    after: int

    def __post_init__(self) -> None:
        if self.before < 0 or self.after < 0:
            raise DomainError("window extents must be nonnegative")

    @staticmethod
    def default_for(period: str) -> "MatchWindow":
        # one week back, two weeks forward, expressed in the cadence's periods
        if period == "weekly":
            return MatchWindow(1, 2)
        if period == "daily":
            return MatchWindow(7, 14)
        raise DomainError(f"no default window for cadence {period!r}")


class MatchCounts(NamedTuple):
    tp: int
    fp: int
    fn: int


class PRPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float


@dataclasses.dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]

    def __post_init__(self) -> None:
        for pt in self.points:
            if not 0.0 <= pt.precision <= 1.0 or not 0.0 <= pt.recall <= 1.0:
                raise DomainError(f"precision/recall out of range in {pt!r}")
        for a, b in zip(self.points, self.points[1:]):
            if b.threshold < a.threshold:
                raise DomainError("curve thresholds must be sorted")


def alarms_from_pvalues(p_series: Sequence[float], threshold: float) -> AlarmSeries:
    """Alarm wherever the p-value falls strictly below the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold must lie in [0, 1], got {threshold!r}")
    arr = np.asarray(p_series, dtype=float)
    bad = np.flatnonzero(np.isnan(arr) | (arr < 0.0) | (arr > 1.0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"p-values must lie in [0, 1], got {arr[i]!r} at index {i}")
    return AlarmSeries(tuple(int(i) for i in np.flatnonzero(arr < threshold)))


def alarms_from_growth(prev: PrevalenceSeries, theta: float, l: int) -> AlarmSeries:
    """Alarm where the rate exceeds its trailing l-period mean by more than
    a factor of 1+theta. Periods whose trailing mean is zero never alarm."""
    if int(l) != l or l < 1:
        raise DomainError(f"baseline length must be a positive integer, got {l!r}")
    if prev.length <= l:
        raise DomainError(
            f"series of length {prev.length} leaves no period with a "
            f"{l}-period baseline"
        )
    rates = prev.rates
    hits = []
    for t in range(int(l), prev.length):
        base = math.fsum(rates[t - int(l) : t]) / l
        if base > 0.0 and rates[t] / base - 1.0 > theta:
            hits.append(t)
    return AlarmSeries(tuple(hits))


def match_alarms(
    truth: AlarmSeries, predicted: AlarmSeries, window: MatchWindow
) -> MatchCounts:
    """Greedy one-to-one matching in ascending time.

    Each truth alarm at t claims the earliest still-unclaimed predicted alarm
    in [t-before, t+after]. Because every window is the same translate, the
    greedy pass attains the maximum possible number of pairs. Leftover
    predictions are false positives; leftover truth alarms are misses.
    """
    preds = list(predicted.period_indices)
    next_free = 0
    tp = 0
    for t in truth.period_indices:
        while next_free < len(preds) and preds[next_free] < t - window.before:
            next_free += 1
        if next_free < len(preds) and preds[next_free] <= t + window.after:
            tp += 1
            next_free += 1
    return MatchCounts(tp, len(preds) - tp, len(truth) - tp)


def precision_recall(counts: MatchCounts) -> tuple[float, float]:
    """Precision and recall with the empty-side conventions: raising no
    alarms yields precision 1, and an empty truth set yields recall 1."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 1.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 1.0
    return precision, recall


def pr_curve(
    p_series: Sequence[float],
    truth: AlarmSeries,
    window: MatchWindow,
    thresholds: Sequence[float],
) -> PRCurve:
    """One precision/recall point per alarm threshold."""
    if not thresholds:
        raise DomainError("at least one threshold is required")
    for th in thresholds:
        if not 0.0 < th < 1.0:
            raise DomainError(f"thresholds must lie in (0, 1), got {th!r}")
    points = []
    for th in sorted(thresholds):
        counts = match_alarms(truth, alarms_from_pvalues(p_series, th), window)
        precision, recall = precision_recall(counts)
        points.append(PRPoint(float(th), precision, recall))
    return PRCurve(tuple(points))


def recall_at_fdr(curve: PRCurve, fdr: float) -> float:
    """Best recall among points whose precision keeps the false discovery
    rate at or under `fdr`; 0 when no point qualifies."""
    if not curve.points:
        raise DomainError("cannot summarize an empty curve")
    if not 0.0 <= fdr <= 1.0:
        raise DomainError(f"fdr must lie in [0, 1], got {fdr!r}")
    qualifying = [pt.recall for pt in curve.points if pt.precision >= 1.0 - fdr]
    return max(qualifying) if qualifying else 0.0


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    for v in (precision, recall):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"precision/recall must lie in [0, 1], got {v!r}")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
