"""Adaptive Bayesian-optimization configuration oracle.

Each trading period the oracle refits the spatiotemporal GP on its
moving window of (theta, t, log return) rows, fixes the time coordinate
to the known next period and maximizes the UCB acquisition over the
parameter box with a particle swarm. The first ``n_init`` periods use a
Latin hypercube design instead.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .gp import (
    GPDataset,
    GPFitError,
    GPPosterior,
    HyperPriors,
    InputScaler,
    KernelHyperparams,
    condition,
    fit_map,
    initial_hyperparams,
    temporal_lengthscale_diagnostic,
)

logger = logging.getLogger(__name__)


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class PSOConfig:
    particles: int = 40
    iterations: int = 60
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.5  # fraction of the box width


@dataclass(frozen=True)
class OracleConfig:
    kappa: float = 2.0
    window_capacity: int = 300
    n_init: int = 10
    pso: PSOConfig = field(default_factory=PSOConfig)
    seed: int = 0
    priors: HyperPriors = field(default_factory=HyperPriors)
    n_restarts: int = 5
    # restarts on refits that warm-start from the previous MAP point
    n_restarts_warm: int = 1
    # full MAP refit every period below this window size, then every refit_every periods
    full_refit_below: int = 100
    refit_every: int = 5
    always_refit: bool = False
    split_temporal: bool = True
    ratio_threshold: float = 1.0

    def __post_init__(self):
        if self.kappa < 0:
            raise OracleError("kappa must be >= 0")
        if not self.window_capacity >= self.n_init >= 1:
            raise OracleError("need window_capacity >= n_init >= 1")
        if self.refit_every < 1:
            raise OracleError("refit_every must be >= 1")


@dataclass(frozen=True)
class FeasibleRegion:
    """Search box for one step: static parameter bounds at a known time."""

    param_bounds: np.ndarray
    time_point: float

    def __post_init__(self):
        b = np.asarray(self.param_bounds, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(b)):
            raise OracleError("bounds must be finite")
        if np.any(b[:, 0] > b[:, 1]):
            raise OracleError("lower bound above upper bound")
        object.__setattr__(self, "param_bounds", b)


@dataclass
class TraceRecord:
    period: int
    theta: np.ndarray
    acquisition: float
    realized_return: float
    temporal_lengthscale: float


@dataclass
class OracleTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.realized_return for r in self.records])


# --- building blocks ----------------------------------------------------------


def lhs_init(bounds, n: int, seed=None) -> np.ndarray:
    """Latin hypercube design: one point per equal-width stratum in every dimension."""
    if n < 1:
        raise OracleError("LHS needs n >= 1")
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    d = b.shape[0]
    u = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        u[:, j] = (strata + rng.uniform(size=n)) / n
    return b[:, 0] + u * (b[:, 1] - b[:, 0])


def ucb(posterior: GPPosterior, theta, t, kappa: float) -> np.ndarray:
    """Posterior mean plus kappa posterior standard deviations (log-metric space)."""
    mean, var = posterior.predict(theta, t)
    return mean + kappa * np.sqrt(var)


def pso_maximize(
    objective: Callable[[np.ndarray], np.ndarray],
    bounds,
    config: PSOConfig | None = None,
    seed=None,
    initial: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Maximize a vectorized objective over a box with a global-best swarm.

    ``objective`` maps an (n, D) array to n values. The swarm starts from
    a Latin hypercube design (plus any ``initial`` rows); positions are
    clipped to the box after every move.
    """
    config = config or PSOConfig()
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = b[:, 0], b[:, 1]
    width = hi - lo
    rng = np.random.default_rng(seed)

    pos = lhs_init(b, max(config.particles, 1), rng)
    if initial is not None:
        extra = np.clip(np.asarray(initial, dtype=float).reshape(-1, b.shape[0]), lo, hi)
        pos = np.vstack([pos, extra])
    vmax = config.velocity_clamp * width
    vel = rng.uniform(-1.0, 1.0, size=pos.shape) * vmax

    values = np.asarray(objective(pos), dtype=float)
    best_pos, best_val = pos.copy(), values.copy()
    g = int(np.argmax(best_val))
    g_pos, g_val = best_pos[g].copy(), float(best_val[g])

    for _ in range(config.iterations):
        r1 = rng.uniform(size=pos.shape)
        r2 = rng.uniform(size=pos.shape)
        vel = (
            config.inertia * vel
            + config.cognitive * r1 * (best_pos - pos)
            + config.social * r2 * (g_pos - pos)
        )
        vel = np.clip(vel, -vmax, vmax)
        pos = np.clip(pos + vel, lo, hi)
        values = np.asarray(objective(pos), dtype=float)
        improved = values > best_val
        best_pos[improved] = pos[improved]
        best_val[improved] = values[improved]
        g = int(np.argmax(best_val))
        if best_val[g] > g_val:
            g_pos, g_val = best_pos[g].copy(), float(best_val[g])
    return np.clip(g_pos, lo, hi), g_val


# --- the oracle ---------------------------------------------------------------


class ConfigurationOracle:
    """Per-period parameter oracle for one strategy.

    Usage per period t (1-based):

        theta = oracle.propose(t)
        ... trade with theta, observe gross return r ...
        oracle.observe(theta, t, r)
    """

    def __init__(self, bounds, config: OracleConfig | None = None, names=None):
        self.config = config or OracleConfig()
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise OracleError("lower bound above upper bound")
        self.dim = self.bounds.shape[0]
        self.names = tuple(names) if names else tuple(f"theta{i}" for i in range(self.dim))
        self.rng = np.random.default_rng(self.config.seed)
        self.design = lhs_init(self.bounds, self.config.n_init, self.rng)
        cap = self.config.window_capacity
        self.window_theta: deque = deque(maxlen=cap)
        self.window_t: deque = deque(maxlen=cap)
        self.window_y: deque = deque(maxlen=cap)
        self.trace = OracleTrace()
        self.hyperparams: KernelHyperparams | None = None
        self.posterior: GPPosterior | None = None
        self.scaler: InputScaler | None = None
        self._last_fit_period: int | None = None
        self._pending: dict | None = None

    # data window -------------------------------------------------------------

    def window_size(self) -> int:
        return len(self.window_y)

    def update_observation(self, theta, t: int, gross_return: float) -> None:
        """Append (theta, t, log r); evicts the oldest row beyond capacity."""
        if not (gross_return > 0.0 and math.isfinite(gross_return)):
            raise OracleError(f"gross return must be positive and finite, got {gross_return}")
        self.window_theta.append(np.asarray(theta, dtype=float).copy())
        self.window_t.append(float(t))
        self.window_y.append(math.log(gross_return))

    def dataset(self, scaler: InputScaler) -> GPDataset:
        theta = np.array(self.window_theta).reshape(-1, self.dim)
        return GPDataset(
            scaler.params(theta),
            scaler.time(np.array(self.window_t)),
            np.array(self.window_y),
            capacity=self.config.window_capacity,
        )

    # fitting -----------------------------------------------------------------

    def _needs_full_fit(self, t: int) -> bool:
        cfg = self.config
        if cfg.always_refit or self.hyperparams is None:
            return True
        if self.window_size() < cfg.full_refit_below:
            return True
        return self._last_fit_period is None or t - self._last_fit_period >= cfg.refit_every

    def fit(self, t: int) -> GPPosterior:
        """Refit (or just recondition) the GP for selecting parameters at time t."""
        cfg = self.config
        scaler = InputScaler.for_window(self.bounds, np.array(self.window_t), t)
        data = self.dataset(scaler)
        if self._needs_full_fit(t):
            if self.hyperparams is None:
                init = initial_hyperparams(data, cfg.split_temporal)
                restarts = cfg.n_restarts
            else:
                init = self._rescaled_hyperparams(scaler)
                restarts = cfg.n_restarts_warm
            self.hyperparams = fit_map(data, init, cfg.priors, restarts, self.rng)
            self._last_fit_period = t
            self._fit_scaler = scaler
        else:
            self.hyperparams = self._rescaled_hyperparams(scaler)
        self.scaler = scaler
        self.posterior = condition(data, self.hyperparams)
        return self.posterior

    def _rescaled_hyperparams(self, scaler: InputScaler) -> KernelHyperparams:
        # time units change as the window span grows; keep lengths fixed in periods
        hp = self.hyperparams
        old = getattr(self, "_fit_scaler", scaler)
        ratio = old.t_span / scaler.t_span
        if ratio == 1.0:
            return hp
        return replace(
            hp,
            temporal_l=hp.temporal_l * ratio,
            temporal_l_rq=None if hp.temporal_l_rq is None else hp.temporal_l_rq * ratio,
        )

    def temporal_lengthscale(self) -> float:
        """Shortest fitted temporal lengthscale in periods (nan before the first fit)."""
        if self.hyperparams is None or self.scaler is None:
            return float("nan")
        hp = self.hyperparams
        return self.scaler.unscale_time_length(min(hp.temporal_l, hp.rq_temporal_l))

    def diagnostic(self):
        horizon = max(self.scaler.t_span, 1.0) if self.scaler else 1.0
        return temporal_lengthscale_diagnostic(
            self.temporal_lengthscale(), horizon, self.config.ratio_threshold
        )

    # selection ---------------------------------------------------------------

    def propose(self, t: int) -> np.ndarray:
        """Parameters for period t (1-based)."""
        cfg = self.config
        region = FeasibleRegion(self.bounds, float(t))
        step_seed = self.rng.integers(2**63)
        if t <= cfg.n_init or self.window_size() < min(cfg.n_init, cfg.window_capacity):
            idx = min(t, cfg.n_init) - 1
            theta = self.design[idx].copy()
            self._pending = {"t": t, "acq": float("nan")}
            return theta

        try:
            posterior = self.fit(t)
        except (GPFitError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("period %d: GP fit failed (%s); using best observed parameters", t, exc)
            theta = self.best_observed()
            self._pending = {"t": t, "acq": float("nan")}
            return theta

        scaler = self.scaler
        t_scaled = float(scaler.time(region.time_point))
        lo, hi = region.param_bounds[:, 0], region.param_bounds[:, 1]
        width = np.where(hi > lo, hi - lo, 1.0)

        predict_now = posterior.at_time(t_scaled)

        def acquisition(unit_theta):
            mean, var = predict_now(unit_theta)
            return mean + cfg.kappa * np.sqrt(var)

        unit_box = np.column_stack([np.zeros(self.dim), np.ones(self.dim)])
        incumbent = (self.best_observed() - lo) / width
        best_unit, value = pso_maximize(
            acquisition, unit_box, cfg.pso, seed=step_seed, initial=incumbent[None, :]
        )
        theta = np.clip(lo + best_unit * (hi - lo), lo, hi)
        self._pending = {"t": t, "acq": float(value)}
        return theta

    def best_observed(self) -> np.ndarray:
        if not self.window_y:
            return self.bounds.mean(axis=1)
        i = int(np.argmax(np.array(self.window_y)))
        return np.clip(self.window_theta[i], self.bounds[:, 0], self.bounds[:, 1])

    def observe(self, theta, t: int, gross_return: float) -> None:
        """Record the realized period return for the parameters used at t."""
        self.update_observation(theta, t, gross_return)
        acq = float("nan")
        if self._pending is not None and self._pending["t"] == t:
            acq = self._pending["acq"]
        self._pending = None
        self.trace.records.append(
            TraceRecord(t, np.asarray(theta, dtype=float).copy(), acq, float(gross_return),
                        self.temporal_lengthscale())
        )


def oracle_step(oracle: ConfigurationOracle, t: int) -> np.ndarray:
    return oracle.propose(t)
