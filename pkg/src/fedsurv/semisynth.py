"""Semi-synthetic surveillance data.

Real count series are smoothed into a latent prevalence curve, optionally
rescaled, re-sampled as Poisson observations, and split across synthetic
sites with a chosen share profile. Sampling uses a counter-based generator
(Philox) so every artifact is reproducible from its integer seed.
"""

from __future__ import annotations

import dataclasses
import datetime
import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "CountSeries",
    "PrevalenceSeries",
    "ShareVector",
    "date_range",
    "period_step",
    "moving_average",
    "poisson_sample",
    "split_multinomial",
    "scale_magnitude",
    "normalized_entropy",
]

_PERIOD_DAYS = {"daily": 1, "weekly": 7}


def period_step(period: str) -> datetime.timedelta:
    """Timestamp spacing implied by a cadence name."""
    if period not in _PERIOD_DAYS:
        raise ConfigError(f"unknown cadence {period!r}; expected 'daily' or 'weekly'")
    return datetime.timedelta(days=_PERIOD_DAYS[period])


def date_range(start: datetime.date, length: int, period: str) -> tuple[datetime.date, ...]:
    """Evenly spaced dates starting at `start`, one per period."""
    if length < 0:
        raise DomainError("length must be nonnegative")
    step = period_step(period)
    return tuple(start + i * step for i in range(length))


def _check_timeline(timestamps: Sequence[datetime.date], period: str) -> None:
    step = period_step(period)
    for a, b in zip(timestamps, timestamps[1:]):
        if b - a != step:
            raise DomainError(
                f"timestamps must be strictly increasing with {period} spacing; "
                f"got {a} then {b}"
            )


@dataclasses.dataclass(frozen=True)
class CountSeries:
    """One site's observed counts on a regular daily or weekly timeline."""

    site_id: str
    period: str
    timestamps: tuple[datetime.date, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.counts):
            raise DomainError("timestamps and counts must have equal length")
        _check_timeline(self.timestamps, self.period)
        for c in self.counts:
            if int(c) != c or c < 0:
                raise DomainError(f"counts must be nonnegative integers, got {c!r}")

    @property
    def length(self) -> int:
        return len(self.counts)


@dataclasses.dataclass(frozen=True)
class PrevalenceSeries:
    """Latent nonnegative rate per timestamp on the same timeline rules."""

    period: str
    timestamps: tuple[datetime.date, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.rates):
            raise DomainError("timestamps and rates must have equal length")
        _check_timeline(self.timestamps, self.period)
        for r in self.rates:
            if not math.isfinite(r) or r < 0:
                raise DomainError(f"rates must be finite and nonnegative, got {r!r}")

    @property
    def length(self) -> int:
        return len(self.rates)


@dataclasses.dataclass(frozen=True)
class ShareVector:
    """Site share profile: nonnegative fractions summing to one."""

    shares: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.shares:
            raise DomainError("at least one share is required")
        for s in self.shares:
            if not math.isfinite(s) or s < 0:
                raise DomainError(f"shares must be finite and nonnegative, got {s!r}")
        total = math.fsum(self.shares)
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"shares must sum to 1, got {total!r}")

    @property
    def n_sites(self) -> int:
        return len(self.shares)

    @staticmethod
    def equal(n_sites: int) -> "ShareVector":
        if n_sites < 1:
            raise DomainError("n_sites must be positive")
        return ShareVector((1.0 / n_sites,) * n_sites)


def _coerce_shares(shares: "ShareVector | Iterable[float]") -> ShareVector:
    if isinstance(shares, ShareVector):
        return shares
    return ShareVector(tuple(float(s) for s in shares))


def _generator(seed: int) -> np.random.Generator:
    if int(seed) != seed:
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def moving_average(series: CountSeries, window: int) -> PrevalenceSeries:
    """Smooth counts into a prevalence curve.

    Interior points take the mean of a window centered on them (even widths
    reach one step further forward than back). Where the centered window
    would run off either end, the point falls back to a trailing window of
    however many observations exist, so the output stays aligned with the
    input timeline and a window longer than the series is still defined.
    """
    if int(window) != window or window < 1:
        raise DomainError(f"window must be a positive integer, got {window!r}")
    if series.length == 0:
        raise DomainError("cannot smooth an empty series")
    w = int(window)
    counts = np.asarray(series.counts, dtype=float)
    n = counts.size
    prefix = np.concatenate(([0.0], np.cumsum(counts)))
    back, fwd = (w - 1) // 2, w // 2
    rates = []
    for i in range(n):
        if i - back >= 0 and i + fwd < n:
            lo, hi = i - back, i + fwd + 1
        else:
            lo, hi = max(0, i - w + 1), i + 1
        rates.append(float((prefix[hi] - prefix[lo]) / (hi - lo)))
    return PrevalenceSeries(series.period, series.timestamps, tuple(rates))


def poisson_sample(
    prev: PrevalenceSeries, seed: int, site_id: str = "sampled"
) -> CountSeries:
    """Draw one Poisson observation per timestamp, deterministically in seed."""
    rng = _generator(seed)
    if prev.length:
        counts = rng.poisson(np.asarray(prev.rates, dtype=float))
    else:
        counts = np.zeros(0, dtype=np.int64)
    return CountSeries(
        site_id, prev.period, prev.timestamps, tuple(int(c) for c in counts)
    )


def split_multinomial(
    series: CountSeries, shares: "ShareVector | Iterable[float]", seed: int
) -> list[CountSeries]:
    """Distribute each period's count across sites by a multinomial draw.

    Per-period sums reconstruct the input exactly, so the centralized series
    is always recoverable by adding the pieces back up. Output sites are
    named `<input id>-1` through `<input id>-N`.
    """
    sv = _coerce_shares(shares)
    probs = np.asarray(sv.shares, dtype=float)
    probs = probs / probs.sum()  # guard the 1e-9 slack before the draw
    rng = _generator(seed)
    if series.length:
        table = rng.multinomial(np.asarray(series.counts, dtype=np.int64), probs)
    else:
        table = np.zeros((0, sv.n_sites), dtype=np.int64)
    return [
        CountSeries(
            f"{series.site_id}-{i + 1}",
            series.period,
            series.timestamps,
            tuple(int(c) for c in table[:, i]),
        )
        for i in range(sv.n_sites)
    ]


def scale_magnitude(prev: PrevalenceSeries, multiplier: float) -> PrevalenceSeries:
    """Multiply every rate by a positive factor."""
    if not math.isfinite(multiplier) or multiplier <= 0:
        raise DomainError(f"multiplier must be positive, got {multiplier!r}")
    return PrevalenceSeries(
        prev.period, prev.timestamps, tuple(r * multiplier for r in prev.rates)
    )


def normalized_entropy(shares: "ShareVector | Iterable[float]") -> float:
    """Share imbalance on a 0..1 scale: 1 at equal shares, 0 when one site
    holds everything. Zero shares contribute nothing. Undefined for a single
    site (the normalizer vanishes), so that raises."""
    sv = _coerce_shares(shares)
    if sv.n_sites < 2:
        raise DomainError("normalized entropy needs at least two sites")
    if len(set(sv.shares)) == 1:
        return 1.0  # equal shares are the maximum by definition; skip rounding
    h = -math.fsum(s * math.log(s) for s in sv.shares if s > 0)
    return min(1.0, max(0.0, h / math.log(sv.n_sites)))
