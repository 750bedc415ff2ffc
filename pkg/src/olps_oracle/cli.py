"""Command line entry point: ``run``, ``batch`` and ``report``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .backtest import BacktestError, aggregate_reports, emit_report, run
from .config import ConfigError, load_config
from .gp import GPFitError
from .market_data import MarketDataError
from .metrics import MetricsError
from .oracle import OracleError
from .runtime import tune_allocator
from .strategies import StrategyError

logger = logging.getLogger("olps_oracle")

MODULE_ERRORS = (
    BacktestError, ConfigError, GPFitError, MarketDataError, MetricsError,
    OracleError, StrategyError, OSError,
)


def _run_one(config_path: str, outdir: str | None = None) -> str:
    config = load_config(config_path)
    target = Path(outdir) / config.name if outdir else Path(config.output_dir)
    logger.info("seed=%d config=%s", config.seed, config_path)
    report = run(config)
    emit_report(report, target)
    logger.info("%s: CW=%.6g -> %s", config.name, report.cumulative_wealth, target)
    return str(target)


def cmd_run(args) -> int:
    _run_one(args.config, args.out)
    return 0


def cmd_batch(args) -> int:
    configs = sorted(str(p) for p in Path(args.config_dir).glob("*.cfg"))
    if not configs:
        raise ConfigError(f"no *.cfg files in {args.config_dir}")
    failures = 0
    if args.workers <= 1:
        for path in configs:
            try:
                _run_one(path, args.out)
            except MODULE_ERRORS as exc:
                logger.error("%s: %s", path, exc)
                failures += 1
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = {path: pool.submit(_run_one, path, args.out) for path in configs}
            for path, fut in futures.items():
                try:
                    fut.result()
                except MODULE_ERRORS as exc:
                    logger.error("%s: %s", path, exc)
                    failures += 1
    if args.out:
        aggregate_reports(args.out)
    return 1 if failures else 0


def cmd_report(args) -> int:
    for path in aggregate_reports(args.indir, args.out):
        logger.info("wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olps-oracle", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="parent output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run every *.cfg in a directory and aggregate the results")
    p.add_argument("--config-dir", required=True)
    p.add_argument("--out", help="parent output directory; one subdirectory per run")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("report", help="aggregate run summaries into comparison tables")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", help="where to write tables (default: the input directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    tune_allocator()
    try:
        return args.func(args)
    except MODULE_ERRORS as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
