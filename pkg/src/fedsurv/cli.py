"""Command-line driver: CSV ingestion, experiment orchestration, and
machine-readable outputs.

Every subcommand reads an optional JSON config, an explicit integer seed
where randomness is involved (there is no wall-clock seeding), and an
output path. Outputs are byte-deterministic for identical config and seed:
floats are rendered with repr (shortest round-trip form), JSON keys are
sorted, and line endings are always "\\n".

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import combine
from .errors import ConfigError, DomainError, FedsurvError
from .evaluation import (
    AlarmSeries,
    MatchWindow,
    alarms_from_pvalues,
    f1,
    match_alarms,
    pr_curve,
    precision_recall,
)
from .experiments import (
    DEFAULT_THRESHOLDS,
    POWER_METHODS,
    PowerCurveConfig,
    SemisynthConfig,
    builtin_wave_counts,
    run_power_curve,
    run_semisynth_sweep,
)
from .federation import FederationConfig, SiteNode, run_federation
from .semisynth import CountSeries, ShareVector, split_multinomial
from .surge import SurgeHypothesis, SurgeWindow, exact_p_value

__all__ = ["main", "read_counts_csv"]

CSV_COLUMNS = ("site_id", "date", "count")


# ------------------------------------------------------------- ingestion


def read_counts_csv(path: Path | str) -> list[CountSeries]:
    """Parse a site_id,date,count CSV into one series per site.

    Dates are ISO-8601; cadence (daily or weekly) is inferred from the
    spacing and validated for every site. Rows may arrive in any order.
    Errors carry the offending line number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames
        if header is None:
            raise ConfigError(f"{path}: empty file, expected columns {CSV_COLUMNS}")
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ConfigError(
                f"{path}: missing column {', '.join(repr(c) for c in missing)}"
            )
        unknown = [c for c in header if c not in CSV_COLUMNS]
        if unknown:
            raise ConfigError(
                f"{path}: unknown column {', '.join(repr(c) for c in unknown)}"
            )
        rows: dict[str, list[tuple[datetime.date, int]]] = {}
        for row in reader:
            line = reader.line_num
            site = row["site_id"]
            if site is None or site == "" or any(v is None for v in row.values()):
                raise ConfigError(f"{path}: line {line}: malformed row")
            try:
                date = datetime.date.fromisoformat(row["date"])
            except ValueError as exc:
                raise ConfigError(f"{path}: line {line}: bad date: {exc}") from exc
            try:
                count = int(row["count"])
            except ValueError as exc:
                raise ConfigError(f"{path}: line {line}: bad count: {exc}") from exc
            if count < 0:
                raise ConfigError(f"{path}: line {line}: count must be nonnegative")
            rows.setdefault(site, []).append((date, count))
    if not rows:
        raise ConfigError(f"{path}: no data rows")

    series = []
    for site in sorted(rows):
        entries = sorted(rows[site])
        if len(entries) < 2:
            raise ConfigError(
                f"{path}: site {site!r} has a single row; cadence cannot be inferred"
            )
        gap = (entries[1][0] - entries[0][0]).days
        period = {1: "daily", 7: "weekly"}.get(gap)
        if period is None:
            raise ConfigError(
                f"{path}: site {site!r} rows are {gap} days apart; "
                f"expected daily or weekly"
            )
        try:
            series.append(
                CountSeries(
                    site, period, tuple(d for d, _ in entries), tuple(c for _, c in entries)
                )
            )
        except DomainError as exc:
            raise ConfigError(f"{path}: site {site!r}: {exc}") from exc
    return series


def _pooled(series: Sequence[CountSeries]) -> CountSeries:
    first = series[0]
    for s in series[1:]:
        if s.timestamps != first.timestamps or s.period != first.period:
            raise ConfigError("sites must share cadence and timestamp alignment")
    counts = tuple(sum(s.counts[i] for s in series) for i in range(len(first.counts)))
    return CountSeries("pooled", first.period, first.timestamps, counts)


# ------------------------------------------------------------ config bag


_REQUIRED = object()


class ExperimentConfig:
    """JSON-backed field bag. Commands take what they need; leftover keys
    are treated as configuration errors so typos cannot pass silently."""

    def __init__(self, data: dict, base_dir: Path):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        self._data = dict(data)
        self._base = base_dir

    @staticmethod
    def load(path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return ExperimentConfig({}, Path.cwd())
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return ExperimentConfig(data, p.parent)

    def take(self, key: str, default=_REQUIRED):
        if key in self._data:
            return self._data.pop(key)
        if default is _REQUIRED:
            raise ConfigError(f"config field {key!r} is required")
        return default

    def take_path(self, key: str, default=_REQUIRED) -> Optional[Path]:
        raw = self.take(key, default)
        if raw is None or isinstance(raw, Path):
            return raw
        p = Path(raw)
        if not p.is_absolute():
            p = self._base / p
        if not p.exists():
            raise ConfigError(f"config field {key!r}: file {raw!r} does not exist")
        return p

    def finish(self) -> None:
        if self._data:
            raise ConfigError(
                f"unknown config field {', '.join(repr(k) for k in sorted(self._data))}"
            )

    def hypothesis(self) -> SurgeHypothesis:
        try:
            return SurgeHypothesis(
                float(self.take("theta", 0.3)),
                int(self.take("baseline_len", 4)),
                float(self.take("alpha", 0.05)),
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


def _resolve_seed(args, cfg: ExperimentConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.take("seed", None)
    if seed is None:
        raise ConfigError("a seed is required: pass --seed or set \"seed\" in the config")
    if int(seed) != seed or int(seed) < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    return int(seed)


# --------------------------------------------------------------- output


def _fmt(x) -> str:
    return repr(float(x))


def _write_text(out: Optional[str], text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="")


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


# -------------------------------------------------------------- commands


def cmd_test(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    csv_path = cfg.take_path("csv")
    hyp = cfg.hypothesis()
    at = cfg.take("at")
    site = cfg.take("site", None)
    cfg.finish()
    if int(at) != at or at < 0:
        raise ConfigError(f"config field 'at' must be a nonnegative integer, got {at!r}")
    at = int(at)

    series = read_counts_csv(csv_path)
    if site is not None:
        matches = [s for s in series if s.site_id == site]
        if not matches:
            raise ConfigError(
                f"site {site!r} not found; available: {[s.site_id for s in series]}"
            )
        chosen = matches[0]
    else:
        chosen = _pooled(series)

    l = hyp.baseline_len
    if at < l or at >= len(chosen.counts):
        raise ConfigError(
            f"period {at} lacks {l} history periods inside a series of "
            f"length {len(chosen.counts)}"
        )
    window = SurgeWindow(chosen.counts[at - l : at], chosen.counts[at])
    p = exact_p_value(window, hyp)
    text = _csv_text(
        ("period", "c", "n", "p"),
        [(str(at), str(window.baseline_total), str(window.total), _fmt(p))],
    )
    _write_text(args.out, text)
    return 0


def cmd_combine(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    method = cfg.take("method")
    p_values = cfg.take("p_values")
    shares = cfg.take("shares", None)
    total = cfg.take("total_count", None)
    rho = cfg.take("rho", None)
    if rho is None and ("theta" in cfg._data or "baseline_len" in cfg._data):
        rho = cfg.hypothesis().rho
    cfg.finish()

    ev = combine.EvidenceSet(
        tuple(p_values),
        shares=None if shares is None else tuple(shares),
        total_count=total,
        rho=rho,
    )
    result = combine.combine_by_id(method, ev)
    text = _csv_text(
        ("method", "statistic", "p"),
        [(result.method, _fmt(result.statistic), _fmt(result.p))],
    )
    _write_text(args.out, text)
    return 0


def cmd_power_curve(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    seed = _resolve_seed(args, cfg)
    hyp = cfg.hypothesis()
    pc = PowerCurveConfig(
        hypothesis=hyp,
        n_total=int(cfg.take("n_total", 200)),
        shares=tuple(float(s) for s in cfg.take("shares", (0.5, 0.5))),
        theta_grid=tuple(float(t) for t in cfg.take("theta_grid", PowerCurveConfig.theta_grid)),
        methods=tuple(cfg.take("methods", POWER_METHODS)),
        calibration_reps=int(cfg.take("calibration_reps", 100_000)),
        power_reps=int(cfg.take("power_reps", 50_000)),
    )
    cfg.finish()
    result = run_power_curve(pc, seed)
    rows = [(_fmt(pt.theta_alt), pt.method, _fmt(pt.power)) for pt in result.points]
    rows.sort(key=lambda r: (r[1], float(r[0])))
    _write_text(args.out, _csv_text(("theta_alt", "method", "power"), rows))
    return 0


def _semisynth_config(cfg: ExperimentConfig) -> SemisynthConfig:
    return SemisynthConfig(
        hypothesis=cfg.hypothesis(),
        smoothing_window=int(cfg.take("smoothing_window", 5)),
        n_replicates=int(cfg.take("n_replicates", 20)),
        site_sweep=tuple(int(n) for n in cfg.take("site_sweep", (2, 5, 10, 20))),
        site_sweep_magnitude=float(cfg.take("site_sweep_magnitude", 0.2)),
        magnitude_sweep=tuple(float(m) for m in cfg.take("magnitude_sweep", (0.1, 0.5, 1.0, 2.0))),
        dominant_sweep=tuple(float(d) for d in cfg.take("dominant_sweep", (0.2, 0.4, 0.6, 0.8))),
        entropy_sites=int(cfg.take("entropy_sites", 5)),
        methods=tuple(cfg.take("methods", POWER_METHODS)),
        thresholds=tuple(float(t) for t in cfg.take("thresholds", DEFAULT_THRESHOLDS)),
    )


def cmd_semisynth(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    seed = _resolve_seed(args, cfg)
    csv_path = cfg.take_path("csv", None)
    sweep_cfg = _semisynth_config(cfg)
    cfg.finish()

    counts = None
    if csv_path is not None:
        counts = _pooled(read_counts_csv(csv_path))
    result = run_semisynth_sweep(sweep_cfg, seed, counts=counts)
    rows = [
        (r.sweep, r.setting, _fmt(r.entropy), r.method, _fmt(r.recall_at_fdr), _fmt(r.f1))
        for r in result.rows
    ]
    _write_text(
        args.out,
        _csv_text(("sweep", "setting", "entropy", "method", "recall_at_fdr", "f1"), rows),
    )
    return 0


def cmd_federation(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    csv_path = cfg.take_path("csv", None)
    hyp = cfg.hypothesis()
    fed_cfg = FederationConfig(
        hypothesis=hyp,
        method=cfg.take("method", "wstouffer"),
        share_source=cfg.take("share_source", "known"),
        reporting_cycle=int(cfg.take("reporting_cycle", 1)),
        lag=int(cfg.take("lag", 0)),
    )

    if csv_path is not None:
        if cfg.take("n_sites", None) is not None or cfg.take("shares", None) is not None:
            raise ConfigError("n_sites and shares apply only when no csv is given")
        cfg.finish()
        sites = [SiteNode.wrap(s) for s in read_counts_csv(csv_path)]
        seed = None
    else:
        # no input data: split the built-in fixture into synthetic sites
        seed = _resolve_seed(args, cfg)
        n_sites = int(cfg.take("n_sites", 5))
        shares_raw = cfg.take("shares", None)
        cfg.finish()
        shares = (
            ShareVector(tuple(float(s) for s in shares_raw))
            if shares_raw is not None
            else ShareVector.equal(n_sites)
        )
        if shares.n_sites != n_sites:
            raise ConfigError("shares length must equal n_sites")
        parts = split_multinomial(builtin_wave_counts(), shares, seed)
        sites = [SiteNode.wrap(s) for s in parts]

    combined = run_federation(sites, fed_cfg)
    timeline = sites[0].timeline
    alpha = hyp.alpha
    periods = [
        {
            "period": cp.period_index,
            "date": timeline[cp.period_index].isoformat(),
            "p": float(cp.p),
            "shares": None if cp.shares is None else [float(s) for s in cp.shares],
            "alarm": bool(cp.p < alpha),
        }
        for cp in combined
    ]
    alarm_rows = [
        (str(e["period"]), e["date"], _fmt(e["p"])) for e in periods if e["alarm"]
    ]
    doc = {
        "config": {
            "method": fed_cfg.method,
            "share_source": fed_cfg.share_source,
            "reporting_cycle": fed_cfg.reporting_cycle,
            "lag": fed_cfg.lag,
            "theta": hyp.theta,
            "baseline_len": hyp.baseline_len,
            "alpha": alpha,
            "seed": seed,
        },
        "sites": [s.site_id for s in sorted(sites, key=lambda s: s.site_id)],
        "periods": periods,
        "summary": {
            "n_periods": len(periods),
            "n_alarms": len(alarm_rows),
        },
    }
    _write_text(args.out, _json_text(doc))
    alarm_text = _csv_text(("period", "date", "p"), alarm_rows)
    if args.out is not None:
        Path(args.out).with_suffix(".alarms.csv").write_text(
            alarm_text, encoding="utf-8", newline=""
        )
    else:
        sys.stdout.write(alarm_text)
    return 0


def _read_scores_csv(path: Path) -> list[float]:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "p" not in reader.fieldnames:
            raise ConfigError(f"{path}: missing column 'p'")
        out = []
        for row in reader:
            try:
                out.append(float(row["p"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: line {reader.line_num}: bad p-value") from exc
    if not out:
        raise ConfigError(f"{path}: no data rows")
    return out


def _read_truth_csv(path: Path) -> AlarmSeries:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "period" not in reader.fieldnames:
            raise ConfigError(f"{path}: missing column 'period'")
        periods = []
        for row in reader:
            try:
                periods.append(int(row["period"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: line {reader.line_num}: bad period") from exc
    return AlarmSeries.of(periods)


def cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    scores_path = cfg.take_path("scores")
    truth_path = cfg.take_path("truth")
    cadence = cfg.take("cadence", "weekly")
    window_raw = cfg.take("match_window", None)
    thresholds = tuple(float(t) for t in cfg.take("thresholds", DEFAULT_THRESHOLDS))
    cfg.finish()

    window = (
        MatchWindow(int(window_raw[0]), int(window_raw[1]))
        if window_raw is not None
        else MatchWindow.default_for(cadence)
    )
    pvalues = _read_scores_csv(scores_path)
    truth = _read_truth_csv(truth_path)
    curve = pr_curve(pvalues, truth, window, thresholds)
    rows = []
    for point in curve.points:
        predicted = alarms_from_pvalues(pvalues, point.threshold)
        counts = match_alarms(truth, predicted, window)
        precision, recall = precision_recall(counts)
        rows.append(
            (_fmt(point.threshold), _fmt(precision), _fmt(recall), _fmt(f1(precision, recall)))
        )
    _write_text(args.out, _csv_text(("threshold", "precision", "recall", "f1"), rows))
    return 0


# ------------------------------------------------------------ entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsurv",
        description="Federated epidemic surveillance experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seeded):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="JSON", help="JSON config file")
        p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
        if seeded:
            p.add_argument("--seed", type=int, metavar="U64", help="RNG seed")
        p.set_defaults(func=func)

    add("test", cmd_test, "exact surge test on one CSV window", seeded=False)
    add("combine", cmd_combine, "combine per-site p-values", seeded=False)
    add("power-curve", cmd_power_curve, "calibrated Monte Carlo power curves", seeded=True)
    add("semisynth", cmd_semisynth, "semi-synthetic detection sweep", seeded=True)
    add("federation", cmd_federation, "federated protocol run", seeded=True)
    add("evaluate", cmd_evaluate, "precision/recall against truth alarms", seeded=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"fedsurv: error: {exc}", file=sys.stderr)
        return 2
    except FedsurvError as exc:
        print(f"fedsurv: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fedsurv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
