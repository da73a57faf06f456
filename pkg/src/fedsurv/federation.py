"""Federated surveillance protocol simulator.

Each site holds its raw counts privately and emits two kinds of reports:
per-period p-values from its own surge test, and lagged coarse totals
aggregated over a reporting cycle. The aggregator sees only those reports;
it resolves site shares (known out of band, estimated from coarse totals,
or not at all) and combines the per-period p-values with a configured
meta-analysis method.

Share sources:
  * "estimated" and "none" are the federated paths; the aggregator's inputs
    are report values only.
  * "known" is the benchmark upper bound where true window shares are
    assumed available out of band, as when custodians publish sizes.

The simulator is in-process message passing. Reports are JSON-serializable
dictionaries, which is the seam a networked deployment would replace.
"""

from __future__ import annotations

import dataclasses
import math
from typing import NamedTuple, Optional, Sequence

from . import combine
from .errors import ConfigError, DomainError
from .semisynth import CountSeries, ShareVector
from .surge import SurgeHypothesis, SurgeWindow, exact_p_value

__all__ = [
    "SiteNode",
    "PValueReport",
    "CoarseReport",
    "FederationConfig",
    "CombinedPeriod",
    "site_compute_report",
    "site_coarse_reports",
    "estimate_shares",
    "aggregate_period",
    "run_federation",
]

SHARE_SOURCES = ("known", "estimated", "none")


@dataclasses.dataclass(frozen=True)
class SiteNode:
    """A data custodian. The raw series never leaves this object; callers
    get p-value and coarse reports only."""

    site_id: str
    private_series: CountSeries = dataclasses.field(repr=False)

    @staticmethod
    def wrap(series: CountSeries) -> "SiteNode":
        return SiteNode(series.site_id, series)

    @property
    def length(self) -> int:
        return self.private_series.length

    @property
    def period(self) -> str:
        return self.private_series.period

    @property
    def timeline(self) -> tuple:
        return self.private_series.timestamps


@dataclasses.dataclass(frozen=True)
class PValueReport:
    """What a site shares per period: its identity and a p-value. No counts."""

    site_id: str
    period_index: int
    p_value: float

    def __post_init__(self) -> None:
        if math.isnan(self.p_value) or not 0.0 <= self.p_value <= 1.0:
            raise DomainError(f"p_value must lie in [0, 1], got {self.p_value!r}")

    def to_json(self) -> dict:
        return {"site_id": self.site_id, "period": self.period_index, "p": self.p_value}


@dataclasses.dataclass(frozen=True)
class CoarseReport:
    """A site's total over one full reporting cycle, released after the lag."""

    site_id: str
    cycle_index: int
    total_count: int

    def __post_init__(self) -> None:
        if int(self.total_count) != self.total_count or self.total_count < 0:
            raise DomainError("total_count must be a nonnegative integer")
        if self.cycle_index < 0:
            raise DomainError("cycle_index must be nonnegative")

    def to_json(self) -> dict:
        return {"site_id": self.site_id, "cycle": self.cycle_index, "total": self.total_count}


@dataclasses.dataclass(frozen=True)
class FederationConfig:
    hypothesis: SurgeHypothesis
    method: str
    share_source: str = "known"
    reporting_cycle: int = 1
    lag: int = 0

    def __post_init__(self) -> None:
        if self.method not in combine.METHOD_IDS:
            raise ConfigError(
                f"unknown method {self.method!r}; expected one of {combine.METHOD_IDS}"
            )
        if self.share_source not in SHARE_SOURCES:
            raise ConfigError(
                f"share_source must be one of {SHARE_SOURCES}, got {self.share_source!r}"
            )
        if self.method in combine.SHARE_METHODS and self.share_source == "none":
            raise ConfigError(
                f"method {self.method!r} weights by shares; share_source "
                f"must be 'known' or 'estimated'"
            )
        if int(self.reporting_cycle) != self.reporting_cycle or self.reporting_cycle < 1:
            raise ConfigError("reporting_cycle must be a positive integer")
        if int(self.lag) != self.lag or self.lag < 0:
            raise ConfigError("lag must be a nonnegative integer")


class CombinedPeriod(NamedTuple):
    period_index: int
    p: float
    shares: Optional[tuple]

    def to_json(self) -> dict:
        shares = None if self.shares is None else list(self.shares)
        return {"period": self.period_index, "p": self.p, "shares": shares}


def site_compute_report(
    site: SiteNode, t: int, hyp: SurgeHypothesis
) -> Optional[PValueReport]:
    """The site's exact surge p-value for the window ending at period t,
    or None while there is not yet a full baseline of history."""
    l = hyp.baseline_len
    if t >= site.length:
        raise DomainError(f"period {t} beyond series of length {site.length}")
    if t < l:
        return None
    counts = site.private_series.counts
    window = SurgeWindow(counts[t - l : t], counts[t])
    return PValueReport(site.site_id, t, exact_p_value(window, hyp))


def site_coarse_reports(site: SiteNode, cfg: FederationConfig) -> tuple[CoarseReport, ...]:
    """Totals over every complete reporting cycle in the site's history.
    Cycle k covers periods [k*C, (k+1)*C - 1] and is released `lag` periods
    after its last one."""
    c = cfg.reporting_cycle
    counts = site.private_series.counts
    reports = []
    k = 0
    while (k + 1) * c <= len(counts):
        total = sum(counts[k * c : (k + 1) * c])
        reports.append(CoarseReport(site.site_id, k, total))
        k += 1
    return tuple(reports)


def release_period(cycle_index: int, cfg: FederationConfig) -> int:
    """First period at which a cycle's coarse report is usable."""
    return (cycle_index + 1) * cfg.reporting_cycle - 1 + cfg.lag


def estimate_shares(
    coarse: Sequence[CoarseReport],
    t: int,
    cfg: FederationConfig,
    site_ids: Optional[Sequence[str]] = None,
) -> ShareVector:
    """Share estimate from the most recent coarse totals released by t.

    Each site contributes its latest released cycle total; shares are the
    normalized totals. Falls back to uniform when any site has released
    nothing yet, or when every released total is zero.
    """
    if site_ids is None:
        site_ids = sorted({r.site_id for r in coarse})
    ids = list(site_ids)
    if not ids:
        raise ConfigError("cannot estimate shares with no sites")
    uniform = ShareVector.equal(len(ids))
    latest: dict[str, CoarseReport] = {}
    for report in coarse:
        if report.site_id not in ids or release_period(report.cycle_index, cfg) > t:
            continue
        kept = latest.get(report.site_id)
        if kept is None or report.cycle_index > kept.cycle_index:
            latest[report.site_id] = report
    if set(latest) != set(ids):
        return uniform
    totals = [latest[sid].total_count for sid in ids]
    grand = sum(totals)
    if grand == 0:
        return uniform
    return ShareVector(tuple(v / grand for v in totals))


def estimated_window_total(
    coarse: Sequence[CoarseReport],
    t: int,
    cfg: FederationConfig,
    site_ids: Sequence[str],
) -> int:
    """Pooled test-window size inferred from released cycle totals: the
    per-cycle pooled count rescaled from cycle length to window length."""
    released = {}
    for report in coarse:
        if report.site_id not in site_ids or release_period(report.cycle_index, cfg) > t:
            continue
        kept = released.get(report.site_id)
        if kept is None or report.cycle_index > kept.cycle_index:
            released[report.site_id] = report
    window_len = cfg.hypothesis.baseline_len + 1
    pooled = sum(r.total_count for r in released.values())
    return max(1, round(pooled * window_len / cfg.reporting_cycle))


def aggregate_period(
    reports: Sequence[PValueReport],
    cfg: FederationConfig,
    shares: Optional[ShareVector] = None,
    total_count: Optional[int] = None,
) -> combine.CombinedResult:
    """Combine one period's reports. This is the aggregator's whole input
    surface: report values plus an optional resolved share vector."""
    if not reports:
        raise DomainError("no reports to aggregate")
    period = reports[0].period_index
    for r in reports:
        if r.period_index != period:
            raise ConfigError("reports from different periods cannot be aggregated")
    ordered = sorted(reports, key=lambda r: r.site_id)
    needs_shares = cfg.method in combine.SHARE_METHODS
    if needs_shares and shares is None:
        raise ConfigError(f"method {cfg.method!r} requires a share vector")
    if shares is not None and shares.n_sites != len(ordered):
        raise ConfigError("share vector length does not match report count")
    evidence = combine.EvidenceSet(
        p_values=tuple(r.p_value for r in ordered),
        shares=None if shares is None else shares.shares,
        total_count=total_count,
        rho=cfg.hypothesis.rho,
    )
    return combine.combine_by_id(cfg.method, evidence)


def _known_shares_and_total(
    sites: Sequence[SiteNode], t: int, l: int
) -> tuple[Optional[ShareVector], int]:
    # benchmark side channel: true window totals, bypassing the report
    # boundary on purpose (share_source="known" models out-of-band sizes)
    totals = [sum(s.private_series.counts[t - l : t + 1]) for s in sites]
    pooled = sum(totals)
    if pooled == 0:
        return None, 0
    return ShareVector(tuple(v / pooled for v in totals)), pooled


def run_federation(
    sites: Sequence[SiteNode], cfg: FederationConfig
) -> list[CombinedPeriod]:
    """Drive the protocol over every period with a full baseline.

    Sites are processed in site_id order; output is one combined p-value
    per period, with the share vector the aggregator used (None when the
    method ignores shares). Deterministic given (sites, config).
    """
    if not sites:
        raise ConfigError("at least one site is required")
    ordered = sorted(sites, key=lambda s: s.site_id)
    ids = [s.site_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ConfigError("site_ids must be unique")
    timeline = ordered[0].timeline
    period = ordered[0].period
    for s in ordered[1:]:
        if s.timeline != timeline or s.period != period:
            raise ConfigError("sites must share cadence and timestamp alignment")
    l = cfg.hypothesis.baseline_len
    coarse: list[CoarseReport] = []
    if cfg.share_source == "estimated":
        for s in ordered:
            coarse.extend(site_coarse_reports(s, cfg))

    out: list[CombinedPeriod] = []
    for t in range(l, len(timeline)):
        reports = [site_compute_report(s, t, cfg.hypothesis) for s in ordered]
        assert all(r is not None for r in reports)
        shares: Optional[ShareVector] = None
        total: Optional[int] = None
        if cfg.share_source == "known":
            shares, total = _known_shares_and_total(ordered, t, l)
            if shares is None:
                shares = ShareVector.equal(len(ordered))
                total = 1  # empty pooled window; degenerate but well-typed
        elif cfg.share_source == "estimated":
            shares = estimate_shares(coarse, t, cfg, ids)
            total = estimated_window_total(coarse, t, cfg, ids)
        result = aggregate_period(reports, cfg, shares=shares, total_count=total)
        used = None if cfg.method not in combine.SHARE_METHODS else shares.shares
        out.append(CombinedPeriod(t, result.p, used))
    return out
