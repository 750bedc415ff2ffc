"""Synthetic markets and objective maps with known structure.

Used for verification where the original datasets are not available.
"""

from __future__ import annotations

import numpy as np

from .market_data import PriceRelativeSeries


def ar_market(num_days: int, num_assets: int, phi: float, vol: float, rng,
              z0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Log returns following z_t = phi * z_{t-1} + vol * e_t, independently per asset.

    Returns (relatives, last log return) so regimes can be chained.
    """
    z = np.zeros(num_assets) if z0 is None else np.asarray(z0, dtype=float)
    out = np.empty((num_days, num_assets))
    for t in range(num_days):
        z = phi * z + vol * rng.normal(size=num_assets)
        out[t] = z
    return np.exp(out), z


def regime_switch_market(
    seed: int = 0,
    num_assets: int = 5,
    regime_days: int = 250,
    reversion: float = -0.5,
    momentum: float = 0.5,
    vol: float = 0.02,
) -> PriceRelativeSeries:
    """Mean-reverting regime followed by a momentum regime of equal length.

    Aggressive PAMR (small eps) profits in the first regime and bleeds in
    the second, where staying passive (large eps) is better.
    """
    rng = np.random.default_rng(seed)
    first, z = ar_market(regime_days, num_assets, reversion, vol, rng)
    second, _ = ar_market(regime_days, num_assets, momentum, vol, rng, z0=z)
    return PriceRelativeSeries(
        np.vstack([first, second]), (), name=f"regime_switch_{seed}"
    )


def drifting_momentum_market(
    seed: int = 0,
    num_assets: int = 5,
    num_days: int = 500,
    vol: float = 0.02,
) -> PriceRelativeSeries:
    """Autocorrelation drifting linearly from reversion (-0.5) to momentum (+0.5)."""
    rng = np.random.default_rng(seed)
    z = np.zeros(num_assets)
    out = np.empty((num_days, num_assets))
    for t in range(num_days):
        phi = -0.5 + t / max(num_days - 1, 1)
        z = phi * z + vol * rng.normal(size=num_assets)
        out[t] = z
    return PriceRelativeSeries(np.exp(out), (), name=f"drifting_momentum_{seed}")


def flat_market(num_days: int, num_assets: int) -> PriceRelativeSeries:
    return PriceRelativeSeries(np.ones((num_days, num_assets)), (), name="flat")


class QuadraticMap:
    """Noisy objective -(theta - optimum(t))^2 on [0, 1] with a known optimum path."""

    def __init__(self, optimum, noise: float = 0.005, seed: int = 0):
        self._optimum = optimum if callable(optimum) else (lambda t, c=float(optimum): c)
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def optimum(self, t: int) -> float:
        return float(self._optimum(t))

    def __call__(self, theta, t: int) -> float:
        theta = float(np.ravel(theta)[0])
        return -(theta - self.optimum(t)) ** 2 + self.noise * self.rng.normal()


def stationary_map(seed: int = 0, optimum: float = 0.3, noise: float = 0.005) -> QuadraticMap:
    return QuadraticMap(optimum, noise, seed)


def linear_drift_map(seed: int = 0, horizon: int = 150, start: float = 0.2, end: float = 0.8,
                     noise: float = 0.005) -> QuadraticMap:
    def path(t):
        return start + (end - start) * (t - 1) / max(horizon - 1, 1)

    return QuadraticMap(path, noise, seed)


def run_oracle_on_map(oracle, objective: QuadraticMap, horizon: int) -> np.ndarray:
    """Drive an oracle against a synthetic map; returns (chosen, optimum) per period."""
    out = np.empty((horizon, 2))
    for t in range(1, horizon + 1):
        theta = oracle.propose(t)
        value = objective(theta, t)
        oracle.observe(theta, t, float(np.exp(value)))
        out[t - 1] = (theta[0], objective.optimum(t))
    return out


SYNTHETIC_MARKETS = {
    "regime_switch": regime_switch_market,
    "drifting_momentum": drifting_momentum_market,
}
