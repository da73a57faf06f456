"""Experiment engines behind the CLI: Monte Carlo power curves with
calibrated rejection thresholds, and semi-synthetic detection sweeps over
site count, signal magnitude, and share imbalance.

Both engines are deterministic given their integer seed: every random
stream is derived from one seed tree, and grid points get independent
branches so results do not shift when the grid changes order.
"""

from __future__ import annotations

import dataclasses
import datetime
import math
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import combine, numerics
from .errors import ConfigError, DomainError
from .evaluation import (
    MatchWindow,
    alarms_from_growth,
    alarms_from_pvalues,
    f1,
    match_alarms,
    pr_curve,
    precision_recall,
    recall_at_fdr,
)
from .semisynth import (
    CountSeries,
    PrevalenceSeries,
    ShareVector,
    date_range,
    moving_average,
    normalized_entropy,
    poisson_sample,
    scale_magnitude,
    split_multinomial,
)
from .surge import SurgeHypothesis

__all__ = [
    "POWER_METHODS",
    "PowerCurveConfig",
    "PowerPoint",
    "PowerCurveResult",
    "calibrate_threshold",
    "run_power_curve",
    "SemisynthConfig",
    "SweepRow",
    "SweepResult",
    "builtin_wave_counts",
    "run_semisynth_sweep",
]

POWER_METHODS = ("centralized", "largest_site") + combine.METHOD_IDS

DEFAULT_THETA_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

# geometric coverage of the small-p region where the precision constraint
# binds, plus coarse high points so curves reach the permissive end
DEFAULT_THRESHOLDS = tuple(float(t) for t in np.geomspace(1e-8, 0.5, 40)) + (
    0.65,
    0.8,
    0.9,
)


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def _child_seed(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1, np.uint64)[0])


# ----------------------------------------------------------- power curves


@dataclasses.dataclass(frozen=True)
class PowerCurveConfig:
    hypothesis: SurgeHypothesis = SurgeHypothesis(0.3, 4)
    n_total: int = 200
    shares: tuple[float, ...] = (0.5, 0.5)
    theta_grid: tuple[float, ...] = DEFAULT_THETA_GRID
    methods: tuple[str, ...] = POWER_METHODS
    calibration_reps: int = 100_000
    power_reps: int = 50_000

    def __post_init__(self) -> None:
        if self.n_total < 1:
            raise ConfigError("n_total must be positive")
        ShareVector(tuple(float(s) for s in self.shares))
        if not self.theta_grid:
            raise ConfigError("theta_grid must be nonempty")
        for th in self.theta_grid:
            if th <= -1.0:
                raise ConfigError(f"theta_alt must exceed -1, got {th!r}")
        for m in self.methods:
            if m not in POWER_METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {POWER_METHODS}")
        if self.calibration_reps < 1000 or self.power_reps < 1000:
            raise ConfigError("Monte Carlo replicate counts must be at least 1000")

    @property
    def baseline_rate(self) -> float:
        """Pooled per-period rate chosen so the expected null window total
        is n_total: l baseline periods plus one test period at 1+theta."""
        hyp = self.hypothesis
        return self.n_total / (hyp.baseline_len + 1.0 + hyp.theta)


class PowerPoint(NamedTuple):
    method: str
    theta_alt: float
    power: float


@dataclasses.dataclass(frozen=True)
class PowerCurveResult:
    points: tuple[PowerPoint, ...]
    thresholds: dict
    calibration_rates: dict


def _simulate_method_pvalues(
    rng: np.random.Generator, cfg: PowerCurveConfig, theta_alt: float, reps: int
) -> dict:
    """One Monte Carlo batch: per-method arrays of `reps` p-values.

    Every method sees the same draws, so cross-method comparisons are
    paired. Sites draw Poisson baselines at their share of the pooled rate
    and a test count inflated by 1+theta_alt.
    """
    hyp = cfg.hypothesis
    shares = np.asarray(cfg.shares, dtype=float)
    n_sites = shares.size
    lam_site = cfg.baseline_rate * shares
    base = rng.poisson(lam_site[:, None, None], size=(n_sites, hyp.baseline_len, reps))
    test = rng.poisson(lam_site[:, None] * (1.0 + theta_alt), size=(n_sites, reps))

    c_site = base.sum(axis=1)
    n_site = c_site + test

    def exact_p(c, n):
        p = np.ones(c.shape, dtype=float)
        mask = n > 0
        if mask.any():
            p[mask] = numerics.binomial_cdf(c[mask], n[mask], hyp.rho)
        return p

    p_site = exact_p(c_site, n_site)
    out = {}
    if "centralized" in cfg.methods:
        out["centralized"] = exact_p(c_site.sum(axis=0), n_site.sum(axis=0))
    if "largest_site" in cfg.methods:
        out["largest_site"] = p_site[int(np.argmax(shares))]

    combiners = [m for m in cfg.methods if m in combine.METHOD_IDS]
    if combiners:
        n_pool = n_site.sum(axis=0)
        safe_pool = np.maximum(n_pool, 1)
        share_mat = np.where(n_pool > 0, n_site / safe_pool, 1.0 / n_sites)
        for method in combiners:
            out[method] = combine.combine_matrix(
                method, p_site, shares=share_mat, total_count=safe_pool, rho=hyp.rho
            )
    return out


def calibrate_threshold(
    null_pvalues, alpha: float, tol: float = 0.002, max_iter: int = 200
) -> tuple[float, float]:
    """Bisect the rejection threshold against the empirical null sample and
    return the achievable rejection rate nearest alpha within tol. If every
    rate the bisection visits misses the band (an atom of the discrete
    p-value distribution straddles it), settle on the conservative side.
    Returns (threshold, achieved rate)."""
    srt = np.sort(np.asarray(null_pvalues, dtype=float))
    m = srt.size

    def rate(th: float) -> float:
        return float(np.searchsorted(srt, th, side="left")) / m

    lo, hi = 0.0, 1.0
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        gap = abs(r - alpha)
        if gap <= tol and (best is None or gap < best[0]):
            best = (gap, mid, r)
        if r > alpha:
            hi = mid
        else:
            lo = mid
    if best is not None:
        return best[1], best[2]
    return lo, rate(lo)


def run_power_curve(cfg: PowerCurveConfig, seed: int) -> PowerCurveResult:
    """Calibrate each method's threshold at theta_alt=theta, then sweep the
    grid estimating rejection rates with fresh draws per grid point."""
    root = np.random.SeedSequence(int(seed))
    calib_seq, *eval_seqs = root.spawn(1 + len(cfg.theta_grid))

    hyp = cfg.hypothesis
    null_samples = _simulate_method_pvalues(
        _rng(calib_seq), cfg, hyp.theta, cfg.calibration_reps
    )
    thresholds = {}
    rates = {}
    for method in cfg.methods:
        thresholds[method], rates[method] = calibrate_threshold(
            null_samples[method], hyp.alpha
        )

    points = []
    for theta_alt, seq in zip(cfg.theta_grid, eval_seqs):
        samples = _simulate_method_pvalues(_rng(seq), cfg, theta_alt, cfg.power_reps)
        for method in cfg.methods:
            power = float(np.mean(samples[method] < thresholds[method]))
            points.append(PowerPoint(method, float(theta_alt), power))
    points.sort(key=lambda pt: (pt.method, pt.theta_alt))
    return PowerCurveResult(tuple(points), thresholds, rates)


# ------------------------------------------------------ semisynth sweeps


def builtin_wave_counts() -> CountSeries:
    """Deterministic weekly fixture: a seasonal baseline with recurring
    epidemic bursts and reporting noise, shaped like surveillance counts.
    Fixed internal seed, so every call returns identical data."""
    length = 400
    t = np.arange(length, dtype=float)
    seasonal = 55.0 + 20.0 * np.sin(2.0 * np.pi * t / 52.0)
    burst = np.ones(length)
    profile = np.array([1.7, 2.6, 3.4, 2.9, 2.1, 1.5, 1.2])
    for start in range(20, length - len(profile), 36):
        burst[start : start + len(profile)] *= profile
    rng = _rng(np.random.SeedSequence(780331))
    noisy = rng.poisson(seasonal * burst * rng.lognormal(0.0, 0.06, size=length))
    return CountSeries(
        "builtin",
        "weekly",
        date_range(datetime.date(2016, 1, 4), length, "weekly"),
        tuple(int(v) for v in noisy),
    )


@dataclasses.dataclass(frozen=True)
class SemisynthConfig:
    hypothesis: SurgeHypothesis = SurgeHypothesis(0.3, 4)
    smoothing_window: int = 5
    n_replicates: int = 20
    site_sweep: tuple[int, ...] = (2, 5, 10, 20)
    # the site sweep probes small-count behavior, so it runs leaner than
    # the magnitude/imbalance sweeps
    site_sweep_magnitude: float = 0.2
    magnitude_sweep: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0)
    dominant_sweep: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    entropy_sites: int = 5
    methods: tuple[str, ...] = POWER_METHODS
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self) -> None:
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be positive")
        if self.site_sweep_magnitude <= 0:
            raise ConfigError("site_sweep_magnitude must be positive")
        if self.entropy_sites < 2:
            raise ConfigError("entropy sweep needs at least two sites")
        for n in self.site_sweep:
            if int(n) != n or n < 1:
                raise ConfigError(f"site counts must be positive integers, got {n!r}")
        for m in self.magnitude_sweep:
            if m <= 0:
                raise ConfigError(f"magnitudes must be positive, got {m!r}")
        for d in self.dominant_sweep:
            if not 1.0 / self.entropy_sites <= d < 1.0 + 1e-12:
                raise ConfigError(
                    f"dominant share {d!r} must lie in [1/{self.entropy_sites}, 1]"
                )
        for m in self.methods:
            if m not in POWER_METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {POWER_METHODS}")


class SweepRow(NamedTuple):
    sweep: str
    setting: str
    entropy: float
    method: str
    recall_at_fdr: float
    f1: float


@dataclasses.dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    truth_alarm_counts: dict


def _window_pvalue_matrix(
    counts_matrix: np.ndarray, hyp: SurgeHypothesis
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact per-site p-values for every window ending at t in [l, T).

    Returns (p_matrix (N, T-l), share_matrix (N, T-l), totals (T-l,)) where
    shares and totals describe the realized window counts, the same values
    a known-share federation run would use.
    """
    l = hyp.baseline_len
    n_sites, length = counts_matrix.shape
    if length <= l:
        raise DomainError("series too short for the baseline length")
    padded = np.concatenate(
        [np.zeros((n_sites, 1), dtype=np.int64), np.cumsum(counts_matrix, axis=1)],
        axis=1,
    )
    c = padded[:, l:length] - padded[:, 0 : length - l]
    k = counts_matrix[:, l:length]
    n = c + k
    p = np.ones(n.shape, dtype=float)
    mask = n > 0
    if mask.any():
        p[mask] = numerics.binomial_cdf(c[mask], n[mask], hyp.rho)
    pool = n.sum(axis=0)
    safe_pool = np.maximum(pool, 1)
    share_mat = np.where(pool > 0, n / safe_pool, 1.0 / n_sites)
    return p, share_mat, safe_pool


def _padded_series(values: np.ndarray, warmup: int) -> np.ndarray:
    out = np.ones(warmup + values.size, dtype=float)
    out[warmup:] = values
    return out


def _method_series(
    method: str,
    p_site: np.ndarray,
    share_mat: np.ndarray,
    totals: np.ndarray,
    p_central: np.ndarray,
    largest_index: int,
    rho: float,
) -> np.ndarray:
    if method == "centralized":
        return p_central
    if method == "largest_site":
        return p_site[largest_index]
    return combine.combine_matrix(
        method, p_site, shares=share_mat, total_count=totals, rho=rho
    )


def _sweep_point(
    cfg: SemisynthConfig,
    prev: PrevalenceSeries,
    shares: ShareVector,
    truth_growth,
    window: MatchWindow,
    replicate_seqs,
) -> dict:
    """Replicate-averaged (recall@FDR0.1, F1-vs-centralized) per method."""
    hyp = cfg.hypothesis
    l = hyp.baseline_len
    alpha = hyp.alpha
    largest = int(np.argmax(shares.shares))
    scores = {m: [] for m in cfg.methods}
    for seq in replicate_seqs:
        sample_seq, split_seq = seq.spawn(2)
        central = poisson_sample(prev, _child_seed(sample_seq), site_id="pooled")
        parts = split_multinomial(central, shares, _child_seed(split_seq))
        counts_matrix = np.asarray([p.counts for p in parts], dtype=np.int64)
        p_site, share_mat, totals = _window_pvalue_matrix(counts_matrix, hyp)
        p_central = _window_pvalue_matrix(
            counts_matrix.sum(axis=0, keepdims=True), hyp
        )[0][0]
        truth_central = alarms_from_pvalues(_padded_series(p_central, l), alpha)
        for method in cfg.methods:
            series = _method_series(
                method, p_site, share_mat, totals, p_central, largest, hyp.rho
            )
            padded = _padded_series(series, l)
            curve = pr_curve(padded, truth_growth, window, cfg.thresholds)
            recall_fdr = recall_at_fdr(curve, 0.1)
            predicted = alarms_from_pvalues(padded, alpha)
            precision, recall = precision_recall(
                match_alarms(truth_central, predicted, window)
            )
            scores[method].append((recall_fdr, f1(precision, recall)))
    return {
        m: (
            float(np.mean([s[0] for s in scores[m]])),
            float(np.mean([s[1] for s in scores[m]])),
        )
        for m in cfg.methods
    }


def dominant_profile(dominant: float, n_sites: int) -> ShareVector:
    """One site holding `dominant`, the rest splitting the remainder."""
    if n_sites < 2:
        raise ConfigError("dominant profile needs at least two sites")
    rest = (1.0 - dominant) / (n_sites - 1)
    return ShareVector((dominant,) + (rest,) * (n_sites - 1))


def run_semisynth_sweep(
    cfg: SemisynthConfig, seed: int, counts: Optional[CountSeries] = None
) -> SweepResult:
    """The full pipeline (smooth, sample, split, combine, evaluate) swept
    over site count, magnitude, and share imbalance.

    Ground truth for recall@FDR0.1 is the growth-alarm set of the latent
    prevalence; F1 compares each method's alarms at alpha against the
    centralized exact test's alarms, so centralized scores 1 by definition.
    """
    base = counts if counts is not None else builtin_wave_counts()
    prev = moving_average(base, cfg.smoothing_window)
    window = MatchWindow.default_for(base.period)
    hyp = cfg.hypothesis

    sweep_points = []
    for n in cfg.site_sweep:
        sweep_points.append(
            ("sites", f"{int(n)}", cfg.site_sweep_magnitude, ShareVector.equal(int(n)), 1.0)
        )
    for mag in cfg.magnitude_sweep:
        sweep_points.append(
            ("magnitude", f"{float(mag):g}", float(mag), ShareVector.equal(cfg.entropy_sites), 1.0)
        )
    for dom in cfg.dominant_sweep:
        shares = dominant_profile(float(dom), cfg.entropy_sites)
        sweep_points.append(
            ("entropy", f"{float(dom):g}", 1.0, shares, normalized_entropy(shares))
        )

    root = np.random.SeedSequence(int(seed))
    point_seqs = root.spawn(len(sweep_points))

    rows = []
    truth_counts = {}
    for (sweep, setting, mag, shares, entropy), seq in zip(sweep_points, point_seqs):
        scaled = prev if mag == 1.0 else scale_magnitude(prev, mag)
        truth = alarms_from_growth(scaled, hyp.theta, hyp.baseline_len)
        truth_counts[(sweep, setting)] = len(truth)
        per_method = _sweep_point(
            cfg, scaled, shares, truth, window, seq.spawn(cfg.n_replicates)
        )
        ent = entropy if shares.n_sites >= 2 else float("nan")
        for method in cfg.methods:
            recall_fdr, f1_score = per_method[method]
            rows.append(SweepRow(sweep, setting, ent, method, recall_fdr, f1_score))
    return SweepResult(tuple(rows), truth_counts)
