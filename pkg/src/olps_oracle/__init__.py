"""Online portfolio selection with a Gaussian-process configuration oracle."""

from .backtest import BacktestReport, emit_report, run, run_oracle, run_static
from .config import ExperimentConfig, load_config, parse_config
from .market_data import PriceRelativeSeries, load_csv
from .metrics import PerformanceSummary, ReturnTrajectory, summarize
from .oracle import ConfigurationOracle, OracleConfig, PSOConfig
from .strategies import ROSTER, make_strategy

__all__ = [
    "BacktestReport",
    "ConfigurationOracle",
    "ExperimentConfig",
    "OracleConfig",
    "PSOConfig",
    "PerformanceSummary",
    "PriceRelativeSeries",
    "ROSTER",
    "ReturnTrajectory",
    "emit_report",
    "load_config",
    "load_csv",
    "make_strategy",
    "parse_config",
    "run",
    "run_oracle",
    "run_static",
    "summarize",
]

__version__ = "0.1.0"
