"""Backtest loops for static and oracle-tuned strategies, plus report output."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synthetic
from .config import ExperimentConfig
from .market_data import PriceRelativeSeries, load_csv, load_prices_csv
from .metrics import PerformanceSummary, ReturnTrajectory, summarize
from .oracle import ConfigurationOracle, OracleTrace
from .strategies import Market, make_strategy, period_return, run_weights

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ("name", "CW", "APY", "ann_std", "MDD", "Sharpe", "Calmar", "t", "p")
PLOT_MEASURES = ("APY", "ann_std", "MDD", "Sharpe", "Calmar")


class BacktestError(RuntimeError):
    pass


@dataclass
class BacktestReport:
    name: str
    strategy: str
    dataset: str
    gross_returns: np.ndarray
    weights: np.ndarray
    param_names: tuple[str, ...]
    params: np.ndarray  # T x D parameters in force each period (empty for D = 0)
    summary: PerformanceSummary
    trace: OracleTrace | None = None
    hindsight: bool = False
    seed: int = 0

    @property
    def wealth(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.gross_returns)])

    @property
    def cumulative_wealth(self) -> float:
        return self.summary.cumulative_wealth


def load_dataset(config: ExperimentConfig) -> PriceRelativeSeries:
    spec = config.dataset
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        generator = synthetic.SYNTHETIC_MARKETS.get(parts[1])
        if generator is None:
            raise BacktestError(f"unknown synthetic market {parts[1]!r}")
        seed = int(parts[2]) if len(parts) > 2 else config.seed
        return generator(seed=seed)
    if config.dataset_format == "prices":
        return load_prices_csv(spec)
    return load_csv(spec)


def market_returns(series: PriceRelativeSeries) -> np.ndarray:
    """Per-period returns of the uniform buy-and-hold portfolio."""
    weights = run_weights(Market(series.num_assets), series.relatives)
    return np.einsum("ij,ij->i", weights, series.relatives)


def _summary(config: ExperimentConfig, returns, market, skip: int) -> PerformanceSummary:
    r = returns[skip:] if skip else returns
    m = market[skip:] if skip else market
    return summarize(
        ReturnTrajectory(r, config.periods_per_year),
        ReturnTrajectory(m, config.periods_per_year),
        risk_free_annual=config.risk_free,
        periods_per_year=config.periods_per_year,
    )


def _check_strategy_fits(config: ExperimentConfig, series: PriceRelativeSeries) -> None:
    if config.strategy == "olmar":
        window = config.static_params()["window"]
        if config.oracle:
            window = max(window, config.bounds["window"][1])
        if round(window) > 64:
            raise BacktestError("OLMAR window above the 64-period price buffer")
    if series.num_days < 1:
        raise BacktestError("dataset has no periods")


def run_static(config: ExperimentConfig, series: PriceRelativeSeries | None = None) -> BacktestReport:
    """Fixed-parameter backtest; benchmarks use the full series in hindsight."""
    series = series if series is not None else load_dataset(config)
    _check_strategy_fits(config, series)
    rel = series.relatives
    strategy = make_strategy(config.strategy, relatives=rel)
    params = config.static_params()
    weights = run_weights(strategy, rel, [params] * series.num_days)
    returns = np.einsum("ij,ij->i", weights, rel)
    market = market_returns(series)
    names = config.param_names()
    param_trace = np.tile([params[n] for n in names], (series.num_days, 1)) if names else np.empty((series.num_days, 0))
    return BacktestReport(
        name=config.name,
        strategy=config.strategy,
        dataset=series.name,
        gross_returns=returns,
        weights=weights,
        param_names=names,
        params=param_trace,
        summary=_summary(config, returns, market, 0),
        hindsight=strategy.hindsight,
        seed=config.seed,
    )


def run_oracle(config: ExperimentConfig, series: PriceRelativeSeries | None = None) -> BacktestReport:
    """Oracle-tuned backtest: every period pick theta, trade, reveal, record, update."""
    if not config.oracle:
        raise BacktestError("run_oracle needs oracle = true")
    series = series if series is not None else load_dataset(config)
    _check_strategy_fits(config, series)
    rel = series.relatives
    strategy = make_strategy(config.strategy, relatives=rel)
    if strategy.hindsight:
        raise BacktestError("benchmarks cannot be oracle-tuned")
    names = config.param_names()
    oracle = ConfigurationOracle(config.bounds_array(), config.oracle_config, names)
    static = config.static_params()

    T = series.num_days
    weights = np.empty_like(rel)
    returns = np.empty(T)
    param_trace = np.empty((T, len(names)))
    for i in range(T):
        t = i + 1
        theta = oracle.propose(t)
        params = dict(static)
        params.update(zip(names, theta.tolist()))
        w = strategy.decide(params)
        r = period_return(w, rel[i])
        strategy.observe(rel[i])
        oracle.observe(theta, t, r)
        weights[i], returns[i], param_trace[i] = w, r, theta

    market = market_returns(series)
    skip = config.oracle_config.n_init if config.exclude_warmup else 0
    return BacktestReport(
        name=config.name,
        strategy=config.strategy,
        dataset=series.name,
        gross_returns=returns,
        weights=weights,
        param_names=names,
        params=param_trace,
        summary=_summary(config, returns, market, skip),
        trace=oracle.trace,
        seed=config.seed,
    )


def run(config: ExperimentConfig, series: PriceRelativeSeries | None = None) -> BacktestReport:
    logger.info("run %s on %s (seed %d)", config.name, config.dataset, config.seed)
    if config.oracle:
        return run_oracle(config, series)
    return run_static(config, series)


# --- output -------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def summary_row(report: BacktestReport) -> dict[str, str]:
    row = {"name": report.name}
    row.update({k: _fmt(v) for k, v in report.summary.row().items()})
    return row


def emit_report(report: BacktestReport, outdir: str | Path) -> list[Path]:
    """Write summary, wealth curve, plot data, run info and (if any) the oracle trace."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BacktestError(f"cannot create output directory {outdir}: {exc}") from exc
    written = []

    path = outdir / "summary.csv"
    row = summary_row(report)
    _write_rows(path, SUMMARY_FIELDS, [[row[k] for k in SUMMARY_FIELDS]])
    written.append(path)

    path = outdir / "wealth.csv"
    wealth = report.wealth
    rows = [[0, "", wealth[0]]] + [
        [t, report.gross_returns[t - 1], wealth[t]] for t in range(1, wealth.size)
    ]
    _write_rows(path, ["period", "gross_return", "wealth"], rows)
    written.append(path)

    path = outdir / "plot_data.csv"
    measures = report.summary.row()
    _write_rows(path, ["name", "measure", "value"],
                [[report.name, m, measures[m]] for m in PLOT_MEASURES])
    written.append(path)

    path = outdir / "run_info.csv"
    info = [
        ["name", report.name],
        ["strategy", report.strategy],
        ["dataset", report.dataset],
        ["seed", str(report.seed)],
        ["hindsight", "true" if report.hindsight else "false"],
        ["oracle", "true" if report.trace is not None else "false"],
        ["num_days", str(report.gross_returns.size)],
        ["num_assets", str(report.weights.shape[1])],
    ]
    _write_rows(path, ["key", "value"], info)
    written.append(path)

    if report.trace is not None and len(report.trace):
        path = outdir / "oracle_trace.csv"
        header = ["period", *report.param_names, "acquisition", "realized_return", "temporal_lengthscale"]
        rows = [
            [rec.period, *rec.theta.tolist(), rec.acquisition, rec.realized_return, rec.temporal_lengthscale]
            for rec in report.trace.records
        ]
        _write_rows(path, header, rows)
        written.append(path)
    return written


def _read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_reports(indir: str | Path, outdir: str | Path | None = None) -> list[Path]:
    """Collect per-run summaries under ``indir`` into comparison tables.

    Writes ``cw_table.csv`` (methods x datasets), ``ttest_table.csv`` and
    ``plot_data.csv`` (long format, one row per measure, method, dataset).
    """
    indir = Path(indir)
    outdir = Path(outdir) if outdir else indir
    runs = []
    for summary_path in sorted(indir.rglob("summary.csv")):
        info_path = summary_path.parent / "run_info.csv"
        info = {r["key"]: r["value"] for r in _read_csv(info_path)} if info_path.exists() else {}
        for row in _read_csv(summary_path):
            runs.append((info.get("dataset", summary_path.parent.name), row))
    if not runs:
        raise BacktestError(f"no summary.csv files under {indir}")

    datasets = sorted({d for d, _ in runs})
    methods: list[str] = []
    for _, row in runs:
        if row["name"] not in methods:
            methods.append(row["name"])
    lookup = {(row["name"], d): row for d, row in runs}

    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    path = outdir / "cw_table.csv"
    _write_rows(path, ["method", *datasets],
                [[m, *[lookup.get((m, d), {}).get("CW", "") for d in datasets]] for m in methods])
    written.append(path)

    path = outdir / "ttest_table.csv"
    rows = []
    for m in methods:
        for stat, key in (("t-statistic", "t"), ("p-value", "p")):
            rows.append([m, stat, *[lookup.get((m, d), {}).get(key, "") for d in datasets]])
    _write_rows(path, ["method", "statistic", *datasets], rows)
    written.append(path)

    path = outdir / "plot_data.csv"
    rows = [
        [measure, m, d, lookup[(m, d)][measure]]
        for measure in PLOT_MEASURES
        for m in methods
        for d in datasets
        if (m, d) in lookup
    ]
    _write_rows(path, ["measure", "method", "dataset", "value"], rows)
    written.append(path)
    return written
