"""Performance measures for a sequence of per-period gross returns."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

PERIODS_PER_YEAR = 252


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ReturnTrajectory:
    gross_returns: np.ndarray
    periods_per_year: int = PERIODS_PER_YEAR

    def __post_init__(self):
        r = np.asarray(self.gross_returns, dtype=float).ravel()
        if r.size < 1:
            raise MetricsError("empty return trajectory")
        if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
            raise MetricsError("gross returns must be positive and finite")
        object.__setattr__(self, "gross_returns", r)

    def __len__(self) -> int:
        return self.gross_returns.size

    @property
    def net_returns(self) -> np.ndarray:
        return self.gross_returns - 1.0

    def wealth_curve(self) -> np.ndarray:
        """Wealth before and after each period, starting from 1."""
        return np.concatenate([[1.0], np.cumprod(self.gross_returns)])


def _traj(traj, periods_per_year=PERIODS_PER_YEAR) -> ReturnTrajectory:
    if isinstance(traj, ReturnTrajectory):
        return traj
    return ReturnTrajectory(traj, periods_per_year)


def cumulative_wealth(traj) -> float:
    r = _traj(traj).gross_returns
    # sum of logs keeps long products accurate
    return float(math.exp(np.sum(np.log(r))))


def apy(traj) -> float:
    traj = _traj(traj)
    log_cw = float(np.sum(np.log(traj.gross_returns)))
    return math.expm1(log_cw * traj.periods_per_year / len(traj))


def ann_std(traj) -> float:
    traj = _traj(traj)
    if len(traj) < 2:
        raise MetricsError("annualized std needs at least 2 periods")
    return float(np.std(traj.net_returns, ddof=1) * math.sqrt(traj.periods_per_year))


def max_drawdown_from_wealth(wealth) -> float:
    wealth = np.asarray(wealth, dtype=float)
    peaks = np.maximum.accumulate(wealth)
    return float(np.max((peaks - wealth) / peaks))


def max_drawdown(traj) -> float:
    return max_drawdown_from_wealth(_traj(traj).wealth_curve())


def _ratio(numerator: float, denominator: float) -> float:
    if denominator > 0.0:
        return numerator / denominator
    # zero denominator: signed infinity, or nan when there is nothing to scale
    if numerator == 0.0:
        return math.nan
    return math.copysign(math.inf, numerator)


def sharpe(traj, risk_free_annual: float = 0.0) -> float:
    """(APY - risk free) / annualized std; +-inf (or nan) when volatility is zero."""
    traj = _traj(traj)
    return _ratio(apy(traj) - risk_free_annual, ann_std(traj))


def calmar(traj) -> float:
    """APY / maximum drawdown; +-inf (or nan) when there is no drawdown."""
    traj = _traj(traj)
    return _ratio(apy(traj), max_drawdown(traj))


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    p_value: float


def active_return_ttest(strategy, market) -> TTestResult:
    """One-sided t-test that the mean active return over the market is positive."""
    s = _traj(strategy).gross_returns
    m = _traj(market).gross_returns
    if s.size != m.size:
        raise MetricsError("trajectories must have equal length")
    if s.size < 2:
        raise MetricsError("t-test needs at least 2 periods")
    active = (s - 1.0) - (m - 1.0)
    mean = float(np.mean(active))
    sd = float(np.std(active, ddof=1))
    scale = max(abs(mean), float(np.max(np.abs(active))), 1.0)
    if sd <= 1e-15 * scale:
        if mean == 0.0 or abs(mean) <= 1e-15 * scale:
            return TTestResult(0.0, 0.5)
        return TTestResult(math.copysign(math.inf, mean), 0.0 if mean > 0 else 1.0)
    t = mean / (sd / math.sqrt(s.size))
    p = float(stats.t.sf(t, df=s.size - 1))
    return TTestResult(float(t), p)


@dataclass(frozen=True)
class PerformanceSummary:
    cumulative_wealth: float
    apy: float
    ann_std: float
    max_drawdown: float
    sharpe: float
    calmar: float
    t_stat: float
    p_value: float

    def row(self) -> dict[str, float]:
        return {
            "CW": self.cumulative_wealth,
            "APY": self.apy,
            "ann_std": self.ann_std,
            "MDD": self.max_drawdown,
            "Sharpe": self.sharpe,
            "Calmar": self.calmar,
            "t": self.t_stat,
            "p": self.p_value,
        }


def summarize(traj, market=None, risk_free_annual: float = 0.0,
              periods_per_year: int = PERIODS_PER_YEAR) -> PerformanceSummary:
    traj = _traj(traj, periods_per_year)
    if market is None:
        test = TTestResult(math.nan, math.nan)
    else:
        test = active_return_ttest(traj, _traj(market, periods_per_year))
    vol = ann_std(traj) if len(traj) > 1 else math.nan
    return PerformanceSummary(
        cumulative_wealth=cumulative_wealth(traj),
        apy=apy(traj),
        ann_std=vol,
        max_drawdown=max_drawdown(traj),
        sharpe=_ratio(apy(traj) - risk_free_annual, vol) if len(traj) > 1 else math.nan,
        calmar=calmar(traj),
        t_stat=test.t_stat,
        p_value=test.p_value,
    )
