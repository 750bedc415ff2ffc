"""Portfolio selection rules.

Each causal strategy follows the same two-call protocol per period:

    w_t = strategy.decide(params)   # uses data through t-1 only
    strategy.observe(x_t)           # market reveals period t

so that the parameters active in period t are exactly the ones used to
build ``w_t``. Benchmarks (best stock, BCRP) look at the whole series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# direction vectors shorter than this make an update a no-op
DEGENERATE_NORM = 1e-12


class StrategyError(ValueError):
    pass


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum(w) = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise StrategyError("projection needs a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise StrategyError("cannot project a non-finite vector")
    if np.all(v >= 0.0) and abs(v.sum() - 1.0) <= 1e-15:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    w = np.maximum(v - tau, 0.0)
    return w / w.sum()


def simplex_project_in_norm(y, A, tol: float = 1e-13, max_iter: int = 20000) -> np.ndarray:
    """argmin over the simplex of (w - y)' A (w - y), A positive definite.

    Accelerated projected gradient. Iterates live on the simplex, so only
    the part of A acting on sum-zero directions sets the step size.
    """
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    m = y.size
    if m == 1:
        return np.ones(1)
    P = np.eye(m) - 1.0 / m
    lip = np.linalg.eigvalsh(P @ A @ P)[-1]
    if lip <= 0.0:
        return simplex_project(y)
    step = 1.0 / lip
    w = simplex_project(y)
    z = w.copy()
    t = 1.0
    for _ in range(max_iter):
        w_next = simplex_project(z - step * (A @ (z - y)))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        diff = w_next - w
        # restart momentum when it stops helping
        if np.dot(A @ (z - y), diff) > 0.0:
            z = w_next
            t_next = 1.0
        else:
            z = w_next + ((t - 1.0) / t_next) * diff
        w, t = w_next, t_next
        if np.max(np.abs(diff)) < tol:
            break
    return w


def uniform(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def period_return(w, x) -> float:
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape:
        raise StrategyError(f"portfolio of size {w.size} vs {x.size} relatives")
    return float(np.dot(w, x))


# --- single-step update rules -------------------------------------------------


def market_update(w, x) -> np.ndarray:
    """Buy-and-hold drift: weights grow with their asset's relative."""
    grown = np.asarray(w, dtype=float) * np.asarray(x, dtype=float)
    return grown / grown.sum()


def eg_update(w, x, eta: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if eta < 0:
        raise StrategyError("EG learning rate must be >= 0")
    expo = eta * x / np.dot(w, x)
    expo -= expo.max()
    new = w * np.exp(expo)
    return new / new.sum()


def pamr_update(w, x, eps: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    loss = np.dot(w, x) - eps
    if loss <= 0.0:
        return w.copy()
    direction = x - x.mean()
    norm2 = np.dot(direction, direction)
    if math.sqrt(norm2) < DEGENERATE_NORM:
        return w.copy()
    tau = loss / norm2
    return simplex_project(w - tau * direction)


def olmar_predict(prices: np.ndarray, window: int) -> np.ndarray:
    """Moving-average relative: mean over the last ``window`` prices of p_k / p_t."""
    recent = prices[-window:]
    return recent.mean(axis=0) / prices[-1]


def olmar_update(w, x_pred, eps: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x_pred = np.asarray(x_pred, dtype=float)
    gap = eps - np.dot(w, x_pred)
    if gap <= 0.0:
        return w.copy()
    direction = x_pred - x_pred.mean()
    norm2 = np.dot(direction, direction)
    if math.sqrt(norm2) < DEGENERATE_NORM:
        return w.copy()
    lam = gap / norm2
    return simplex_project(w + lam * direction)


def cwmr_multiplier(mu, sigma, x, phi: float, eps: float) -> float:
    """Lagrange multiplier of the variance-form confidence constraint.

    Solves  phi * x'S(lam)x + mu(lam)'x = eps  with
    S(lam)^-1 = sigma^-1 + 2 lam phi x x'  and
    mu(lam) = mu - lam sigma (x - xbar 1),
    which reduces to a lam^2 + b lam + c = 0.
    """
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    sx = sigma @ x
    s1 = sigma.sum(axis=1)
    M = float(mu @ x)
    V = float(x @ sx)
    xbar = float(s1 @ x) / float(s1.sum())
    Q = V - xbar * float(sx.sum())
    c = eps - M - phi * V
    if c >= 0.0:
        return 0.0
    a = 2.0 * phi * V * Q
    b = Q - 2.0 * phi * V * (M - eps)
    if abs(a) < 1e-300:
        return max(0.0, -c / b) if b > 0 else 0.0
    disc = b * b - 4.0 * a * c
    return max(0.0, (-b + math.sqrt(max(disc, 0.0))) / (2.0 * a))


def cwmr_update(mu, sigma, x, phi: float, eps: float):
    """One deterministic CWMR-Var step. Returns (mean, covariance)."""
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    m = mu.size
    s1 = sigma.sum(axis=1)
    xbar = float(s1 @ x) / float(s1.sum())
    step_dir = sigma @ (x - xbar)
    if np.linalg.norm(step_dir) < DEGENERATE_NORM:
        return mu.copy(), sigma.copy()
    lam = cwmr_multiplier(mu, sigma, x, phi, eps)
    if lam == 0.0:
        return mu.copy(), sigma.copy()
    lam = min(lam, 1e6)
    new_mu = mu - lam * step_dir
    # Sherman-Morrison form of (sigma^-1 + 2 lam phi x x')^-1
    sx = sigma @ x
    k = 2.0 * lam * phi
    new_sigma = sigma - np.outer(sx, sx) * (k / (1.0 + k * float(x @ sx)))
    new_sigma = 0.5 * (new_sigma + new_sigma.T)
    new_sigma = _clamp_covariance(new_sigma, m)
    return simplex_project(new_mu), new_sigma


def _clamp_covariance(sigma: np.ndarray, m: int) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    if not np.all(np.isfinite(vals)) or vals[-1] <= 0.0:
        return np.eye(m) / m**2
    floor = vals[-1] * 1e-10
    vals = np.maximum(vals, floor)
    clamped = (vecs * vals) @ vecs.T
    # keep the overall scale at its initial level (trace 1/m)
    return clamped / (m * np.trace(clamped))


def ons_step(A, b, delta: float, eta: float) -> np.ndarray:
    m = b.size
    try:
        target = delta * np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise StrategyError("ONS matrix solve failed") from None
    p = simplex_project_in_norm(target, A)
    return (1.0 - eta) * p + eta / m


# --- benchmarks ---------------------------------------------------------------


def best_stock(relatives) -> np.ndarray:
    rel = np.asarray(relatives, dtype=float)
    if rel.ndim != 2 or rel.shape[0] == 0:
        raise StrategyError("best stock needs a non-empty series")
    growth = np.log(rel).sum(axis=0)
    w = np.zeros(rel.shape[1])
    w[int(np.argmax(growth))] = 1.0
    return w


def bcrp(relatives, tol: float = 1e-10, max_iter: int = 100000) -> np.ndarray:
    """Best constant rebalanced portfolio by projected gradient ascent.

    Maximizes mean log(w . x_t). Trial steps follow the Barzilai-Borwein
    rule, with Armijo backtracking on the projection arc. Converges when
    the gradient mapping falls below ``tol``.
    """
    rel = np.asarray(relatives, dtype=float)
    if rel.ndim != 2 or rel.shape[0] == 0:
        raise StrategyError("BCRP needs a non-empty series")
    T, m = rel.shape

    def objective(w):
        return float(np.mean(np.log(rel @ w)))

    def gradient(w):
        return (rel / (rel @ w)[:, None]).mean(axis=0)

    # start from the better of uniform and the best vertex
    w = uniform(m)
    vertex = best_stock(rel)
    if objective(vertex) > objective(w):
        w = vertex
    f = objective(w)
    g = gradient(w)
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = simplex_project(w + step * g)
            if np.all(rel @ cand > 0):
                f_cand = objective(cand)
                # Armijo condition on the projection arc
                if f_cand >= f + 1e-4 * np.dot(g, cand - w) or step < 1e-20:
                    break
            step *= 0.5
        mapping = np.linalg.norm(cand - w) / step
        if mapping < tol:
            return cand
        g_cand = gradient(cand)
        s_vec, y_vec = cand - w, g_cand - g
        curvature = -float(np.dot(s_vec, y_vec))
        step = float(np.dot(s_vec, s_vec)) / curvature if curvature > 0 else step * 2.0
        step = min(max(step, 1e-10), 1e10)
        w, f, g = cand, f_cand, g_cand
    raise StrategyError("BCRP projected gradient did not converge")


# --- stateful strategies ------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: float
    lo: float
    hi: float
    integer: bool = False


@dataclass
class StrategyParams:
    """Parameter vector with its box bounds."""

    names: tuple[str, ...]
    values: np.ndarray
    bounds: np.ndarray  # shape (D, 2)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if not (len(self.names) == self.values.size == self.bounds.shape[0]):
            raise StrategyError("parameter names, values and bounds disagree")
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise StrategyError("every bound needs lo < hi")
        if np.any(self.values < self.bounds[:, 0]) or np.any(self.values > self.bounds[:, 1]):
            raise StrategyError("parameter values outside bounds")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


class Strategy:
    """Base class; subclasses fill in ``PARAMS`` and ``_next_portfolio``."""

    name = "base"
    PARAMS: tuple[ParamSpec, ...] = ()
    hindsight = False

    def __init__(self, num_assets: int):
        if num_assets < 1:
            raise StrategyError("need at least one asset")
        self.m = num_assets
        self.weights = uniform(num_assets)
        self.last_x: np.ndarray | None = None
        self.periods_seen = 0

    @classmethod
    def param_names(cls) -> tuple[str, ...]:
        return tuple(p.name for p in cls.PARAMS)

    @classmethod
    def default_params(cls) -> dict[str, float]:
        return {p.name: p.default for p in cls.PARAMS}

    @classmethod
    def default_bounds(cls) -> dict[str, tuple[float, float]]:
        return {p.name: (p.lo, p.hi) for p in cls.PARAMS}

    def _resolve(self, params) -> dict[str, float]:
        out = self.default_params()
        if params is None:
            return out
        if isinstance(params, dict):
            unknown = set(params) - set(out)
            if unknown:
                raise StrategyError(f"{self.name}: unknown parameters {sorted(unknown)}")
            out.update({k: float(v) for k, v in params.items()})
        else:
            values = np.atleast_1d(np.asarray(params, dtype=float))
            if values.size != len(self.PARAMS):
                raise StrategyError(
                    f"{self.name} takes {len(self.PARAMS)} parameters, got {values.size}"
                )
            out = dict(zip(self.param_names(), values.tolist()))
        return out

    def decide(self, params=None) -> np.ndarray:
        """Portfolio for the coming period."""
        p = self._resolve(params)
        if self.last_x is not None:
            self.weights = self._next_portfolio(p)
        return self.weights.copy()

    def observe(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,):
            raise StrategyError(f"expected {self.m} relatives, got shape {x.shape}")
        self.last_x = x
        self.periods_seen += 1
        self._record(x)

    def _record(self, x: np.ndarray) -> None:
        pass

    def _next_portfolio(self, p: dict[str, float]) -> np.ndarray:
        raise NotImplementedError


class Market(Strategy):
    name = "market"

    def _next_portfolio(self, p):
        return market_update(self.weights, self.last_x)


class EG(Strategy):
    name = "eg"
    PARAMS = (ParamSpec("eta", 0.05, 0.0, 0.5),)

    def _next_portfolio(self, p):
        return eg_update(self.weights, self.last_x, p["eta"])


class PAMR(Strategy):
    name = "pamr"
    PARAMS = (ParamSpec("eps", 0.5, 0.0, 1.5),)

    def _next_portfolio(self, p):
        return pamr_update(self.weights, self.last_x, p["eps"])


class OLMAR(Strategy):
    name = "olmar"
    PARAMS = (
        ParamSpec("eps", 10.0, 1.0, 20.0),
        ParamSpec("window", 5.0, 2.0, 30.0, integer=True),
    )

    def __init__(self, num_assets: int, max_window: int = 64):
        super().__init__(num_assets)
        self.max_window = max_window
        self.prices = [np.ones(num_assets)]

    def _record(self, x):
        self.prices.append(self.prices[-1] * x)
        if len(self.prices) > self.max_window:
            # renormalize so prices stay O(1) over long runs
            del self.prices[0]
            base = self.prices[-1].copy()
            self.prices = [p / base for p in self.prices]

    def _next_portfolio(self, p):
        window = max(1, int(round(p["window"])))
        if window > self.max_window:
            raise StrategyError(f"OLMAR window {window} exceeds buffer {self.max_window}")
        if len(self.prices) < window:
            return self.weights
        x_pred = olmar_predict(np.asarray(self.prices), window)
        return olmar_update(self.weights, x_pred, p["eps"])


class CWMR(Strategy):
    name = "cwmr"
    PARAMS = (ParamSpec("phi", 2.0, 0.5, 4.0),)

    def __init__(self, num_assets: int, eps: float = 0.5):
        super().__init__(num_assets)
        self.eps = eps
        self.sigma = np.eye(num_assets) / num_assets**2

    def _next_portfolio(self, p):
        mu, sigma = cwmr_update(self.weights, self.sigma, self.last_x, p["phi"], self.eps)
        self.sigma = sigma
        return mu


class ONS(Strategy):
    """Online Newton step; ``delta`` scales the Newton target and stays fixed."""

    name = "ons"
    PARAMS = (
        ParamSpec("eta", 0.0, 0.0, 0.5),
        ParamSpec("beta", 1.0, 0.1, 10.0),
    )

    def __init__(self, num_assets: int, delta: float = 0.125):
        super().__init__(num_assets)
        self.delta = delta
        self.A = np.eye(num_assets)
        self.b = np.zeros(num_assets)

    def _next_portfolio(self, p):
        grad = self.last_x / np.dot(self.weights, self.last_x)
        self.A = self.A + np.outer(grad, grad)
        self.b = self.b + (1.0 + 1.0 / p["beta"]) * grad
        try:
            return ons_step(self.A, self.b, self.delta, p["eta"])
        except StrategyError:
            return self.weights


class Constant(Strategy):
    """Constant rebalanced portfolio for fixed weights (hindsight benchmarks)."""

    hindsight = True

    def __init__(self, weights: np.ndarray, name: str):
        super().__init__(len(weights))
        self.name = name
        self.weights = np.asarray(weights, dtype=float)

    def _next_portfolio(self, p):
        return self.weights


class BestStock(Strategy):
    """Buy-and-hold of the asset with the best total growth over the series."""

    name = "bs"
    hindsight = True

    def __init__(self, relatives):
        rel = np.asarray(relatives, dtype=float)
        super().__init__(rel.shape[1])
        self.weights = best_stock(rel)

    def _next_portfolio(self, p):
        return self.weights


CAUSAL_STRATEGIES = {cls.name: cls for cls in (Market, EG, ONS, PAMR, CWMR, OLMAR)}
BENCHMARKS = ("bs", "bcrp")
ROSTER = tuple(CAUSAL_STRATEGIES) + BENCHMARKS


def make_strategy(name: str, relatives=None, num_assets: int | None = None, **options) -> Strategy:
    """Build a strategy by roster name.

    Benchmarks need the full ``relatives`` matrix; causal strategies only
    the number of assets.
    """
    key = name.lower()
    if key == "bs":
        return BestStock(relatives)
    if key == "bcrp":
        return Constant(bcrp(relatives), "bcrp")
    if key not in CAUSAL_STRATEGIES:
        raise StrategyError(f"unknown strategy {name!r}; choose from {ROSTER}")
    if num_assets is None:
        num_assets = np.asarray(relatives).shape[1]
    return CAUSAL_STRATEGIES[key](num_assets, **options)


def strategy_class(name: str) -> type[Strategy]:
    key = name.lower()
    if key == "bs":
        return BestStock
    if key == "bcrp":
        return Constant
    try:
        return CAUSAL_STRATEGIES[key]
    except KeyError:
        raise StrategyError(f"unknown strategy {name!r}; choose from {ROSTER}") from None


def run_weights(strategy: Strategy, relatives, params_seq: Sequence | None = None) -> np.ndarray:
    """Feed a whole series through ``strategy``; returns the T x m portfolio matrix."""
    rel = np.asarray(relatives, dtype=float)
    out = np.empty_like(rel)
    for t, x in enumerate(rel):
        params = None if params_seq is None else params_seq[t]
        out[t] = strategy.decide(params)
        strategy.observe(x)
    return out
