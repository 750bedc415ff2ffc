"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Criterion 8 needs the four canonical datasets as price-relative CSV files
(djia.csv, sp500.csv, tse.csv, msci.csv) in the directory named by the
OLPS_DATA_DIR environment variable; oracle-tuned rows additionally need
OLPS_FULL_TABLES=1 because they take hours on one core.
"""

import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import gammaln

from olps_oracle.backtest import emit_report, run
from olps_oracle.config import parse_config
from olps_oracle.gp import (
    GPDataset,
    KernelHyperparams,
    condition,
    gram,
    k_joint,
    log_evidence,
)
from olps_oracle.market_data import load_csv, window
from olps_oracle.metrics import (
    ReturnTrajectory,
    active_return_ttest,
    ann_std,
    apy,
    calmar,
    cumulative_wealth,
    max_drawdown,
    sharpe,
)
from olps_oracle.oracle import ConfigurationOracle, OracleConfig
from olps_oracle.strategies import (
    bcrp,
    cwmr_multiplier,
    cwmr_update,
    eg_update,
    market_update,
    olmar_predict,
    olmar_update,
    pamr_update,
    simplex_project,
)
from olps_oracle.synthetic import (
    linear_drift_map,
    regime_switch_market,
    run_oracle_on_map,
    stationary_map,
)


def random_hp(rng, dim, split):
    vec = rng.normal(0, 0.7, size=2 + 2 * dim + 2 + split)
    vec[-1] = rng.uniform(-4, -1)
    return KernelHyperparams.from_log_vector(vec, dim, split)


# --- 1 ------------------------------------------------------------------------


def test_c01_kernel_validity(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = math.inf
    for i in range(100):
        dup = i % 4 < 2  # repeated (theta, t) rows make the Gram singular
        n, dim = int(rng.integers(1, 34 if dup else 51)), int(rng.integers(1, 5))
        hp = random_hp(rng, dim, split=bool(i % 2))
        X, t = rng.uniform(-2, 2, (n, dim)), np.sort(rng.uniform(0, 10, n))
        if dup:
            rows = rng.integers(0, n, size=n // 2 + 1)
            X, t = np.vstack([X, X[rows]]), np.concatenate([t, t[rows]])
        K = gram(X, t, hp)
        worst = min(worst, float(np.linalg.eigvalsh(K)[0]))
    elapsed = time.perf_counter() - start
    ok = worst >= -1e-8 and elapsed < 10
    criterion(1, "kernel validity", ok,
              f"min eigenvalue {worst:.3e} >= -1e-8 over 100 sets; {elapsed:.1f} s < 10 s")
    assert ok


# --- 2 ------------------------------------------------------------------------


def test_c02_gp_correctness(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_grad = 0.0
    for i in range(20):
        dim = int(rng.integers(1, 4))
        n = 15
        data = GPDataset(rng.random((n, dim)), np.sort(rng.random(n)), rng.normal(0, 0.5, n))
        hp = random_hp(rng, dim, split=bool(i % 2))
        _, grad = log_evidence(data, hp)
        vec = hp.to_log_vector()
        for j in range(vec.size):
            e = np.zeros_like(vec)
            e[j] = 1e-5
            f = lambda v: log_evidence(data, KernelHyperparams.from_log_vector(v, dim, hp.split_temporal),
                                       with_grad=False)[0]
            fd = (f(vec + e) - f(vec - e)) / 2e-5
            worst_grad = max(worst_grad, abs(grad[j] - fd) / max(abs(fd), 1.0))
    worst_interp = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        n = int(rng.integers(2, 15))
        hp = KernelHyperparams.default(dim, lengthscales=np.full(dim, 0.3), noise_sigma=1e-9)
        X, t, y = rng.random((n, dim)), np.arange(float(n)), rng.normal(0, 0.1, n)
        mean, _ = condition(GPDataset(X, t, y), hp).predict(X, t)
        worst_interp = max(worst_interp, float(np.max(np.abs(mean - y))))
    elapsed = time.perf_counter() - start
    ok = worst_grad < 1e-5 and worst_interp < 1e-6 and elapsed < 30
    criterion(2, "GP correctness", ok,
              f"max gradient rel. error {worst_grad:.2e} < 1e-5; interpolation error "
              f"{worst_interp:.2e} < 1e-6; {elapsed:.1f} s < 30 s")
    assert ok


# --- 3 ------------------------------------------------------------------------


def test_c03_one_point_posterior(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 4))
        hp = random_hp(rng, dim, split=bool(rng.integers(2)))
        x, t, y = rng.random(dim), rng.uniform(0, 1), rng.normal(0, 0.1)
        q, tq = rng.random(dim), rng.uniform(0, 1.5)
        post = condition(GPDataset(x[None], [t], [y]), hp)
        k_qx = k_joint(np.append(q, tq), np.append(x, t), hp)
        denom = hp.prior_variance + hp.noise_sigma**2
        mean, var = post.predict(q[None], tq)
        worst = max(worst, abs(mean[0] - k_qx * y / denom),
                    abs(var[0] - (hp.prior_variance - k_qx**2 / denom)))
    ok = worst <= 1e-12
    criterion(3, "hand-checked posteriors", ok, f"max |impl - closed form| {worst:.2e} <= 1e-12")
    assert ok


# --- 4 ------------------------------------------------------------------------


def test_c04_strategy_oracles(criterion):
    errors = {}
    errors["PAMR tau-step"] = np.abs(pamr_update(np.array([0.5, 0.5]), np.array([1.2, 0.8]), 0.9)
                                     - [0.25, 0.75]).max()
    x_pred = olmar_predict(np.array([[1.0, 1.0], [1.0, 2.0], [1.0, 1.0]]), 2)
    errors["OLMAR lambda-step"] = max(np.abs(x_pred - [1.0, 1.5]).max(),
                                      np.abs(olmar_update(np.array([0.5, 0.5]), x_pred, 1.3) - [0.4, 0.6]).max())
    raw = np.array([0.5 * math.exp(0.05 * 4 / 3), 0.5 * math.exp(0.05 * 2 / 3)])
    errors["EG exponent"] = np.abs(eg_update(np.array([0.5, 0.5]), np.array([2.0, 1.0]), 0.05)
                                   - raw / raw.sum()).max()
    errors["BCRP alternating"] = np.abs(bcrp(np.array([[2.0, 1.0], [0.5, 1.0]] * 50)) - 0.5).max()
    errors["simplex KKT (2,0)"] = np.abs(simplex_project([2.0, 0.0]) - [1.0, 0.0]).max()
    errors["simplex KKT symmetric"] = np.abs(simplex_project([0.5, 0.5, 0.5]) - 1 / 3).max()
    errors["market drift"] = np.abs(market_update([0.5, 0.5], [2.0, 1.0]) - [2 / 3, 1 / 3]).max()
    mu, sigma, x = np.array([0.5, 0.5]), np.eye(2), np.array([1.05, 0.95])

    def residual(lam):
        xbar = np.ones(2) @ sigma @ x / 2
        new_mu = mu - lam * sigma @ (x - xbar)
        new_sigma = np.linalg.inv(np.linalg.inv(sigma) + 4 * lam * np.outer(x, x))
        return 2 * x @ new_sigma @ x + new_mu @ x - 0.5

    root = brentq(residual, 0, 1e3, xtol=1e-15)
    errors["CWMR multiplier (relative)"] = abs(cwmr_multiplier(mu, sigma, x, 2.0, 0.5) - root) / root
    worst_example = max(errors.values())

    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(1000):
        m = int(rng.integers(2, 8))
        w = rng.dirichlet(np.ones(m))
        xr = rng.uniform(0.5, 1.5, m)
        flat = np.full(m, rng.uniform(0.5, 1.5))
        checks = [
            np.array_equal(pamr_update(w, xr, np.dot(w, xr) + rng.uniform(0, 1)), w),
            np.array_equal(olmar_update(w, xr, np.dot(w, xr) - rng.uniform(0, 1)), w),
            np.array_equal(pamr_update(w, flat, 0.0), w),
            np.array_equal(olmar_update(w, flat, 50.0), w),
            np.allclose(eg_update(w, flat, rng.uniform(0, 0.5)), w, atol=1e-12, rtol=0),
            np.allclose(eg_update(w, xr, 0.0), w, atol=1e-12, rtol=0),
            np.array_equal(cwmr_update(w, np.eye(m) / m**2, flat, 2.0, 0.5)[0], w),
        ]
        violations += not all(checks)
    ok = worst_example <= 1e-9 and violations == 0
    worst_name = max(errors, key=errors.get)
    criterion(4, "strategy unit oracles", ok,
              f"worst derived example {worst_example:.2e} ({worst_name}) <= 1e-9; "
              f"{violations}/1000 invariant violations")
    assert ok


# --- 5 ------------------------------------------------------------------------


def test_c05_metric_oracles(criterion):
    net = np.array([0.2, -0.2]) / math.sqrt(252) / math.sqrt(2)
    sharpe_r = 1 + np.tile(net, 126)
    examples = {
        "CW flat": (cumulative_wealth(np.ones(10)), 1.0),
        "CW (1.1, 0.9)": (cumulative_wealth([1.1, 0.9]), 0.99),
        "APY flat": (apy(np.ones(7)), 0.0),
        "APY one year": (apy(np.full(252, 2 ** (1 / 252))), 1.0),
        "APY two years": (apy(np.full(504, 1.21 ** (1 / 504))), 0.10),
        "std constant": (ann_std(np.full(4, 1.01)), 0.0),
        "std two-point": (ann_std([1.01, 0.99]), math.sqrt(2e-4 * 252)),
        "MDD monotone": (max_drawdown(np.full(5, 1.01)), 0.0),
        "MDD (1,2,1,3)": (max_drawdown([2.0, 0.5, 3.0]), 0.5),
        "Sharpe at r_f": (sharpe(sharpe_r, apy(sharpe_r)), 0.0),
        "Sharpe ratio": (sharpe(sharpe_r), apy(sharpe_r) / ann_std(sharpe_r)),
        "Calmar ratio": (calmar([1.2, 0.5, 2.5]), apy([1.2, 0.5, 2.5]) / 0.5),
        "Calmar zero": (calmar([2.0, 0.5]), 0.0),
    }
    worst_example = max(abs(got - want) for got, want in examples.values())
    sentinels = sharpe(np.full(5, 1.01)) == math.inf and calmar(np.full(5, 1.01)) == math.inf
    rng = np.random.default_rng(5)
    worst_identity = 0.0
    for _ in range(1000):
        r = np.exp(rng.normal(0.0003, 0.015, int(rng.integers(2, 2000))))
        traj = ReturnTrajectory(r)
        lhs = (1 + apy(traj)) ** (len(r) / 252)
        worst_identity = max(worst_identity, abs(lhs / cumulative_wealth(traj) - 1))
    ok = worst_example <= 1e-12 and worst_identity <= 1e-12 and sentinels
    criterion(5, "metric oracles", ok,
              f"worst example error {worst_example:.2e} <= 1e-12; APY/CW identity "
              f"{worst_identity:.2e} <= 1e-12 rel over 1000 trajectories")
    assert ok


# --- 6 ------------------------------------------------------------------------


@pytest.mark.slow
def test_c06_abo_tracking(criterion):
    start = time.perf_counter()
    stationary_hits, drift_hits, drift_errors = 0, 0, []
    for seed in range(10):
        oracle = ConfigurationOracle([(0.0, 1.0)], OracleConfig(seed=seed))
        path = run_oracle_on_map(oracle, stationary_map(seed=seed), 60)
        stationary_hits += abs(path[59, 0] - 0.3) <= 0.05
        oracle = ConfigurationOracle([(0.0, 1.0)], OracleConfig(seed=seed))
        path = run_oracle_on_map(oracle, linear_drift_map(seed=seed), 150)
        err = float(np.mean(np.abs(path[-50:, 0] - path[-50:, 1])))
        drift_errors.append(err)
        drift_hits += err < 0.1
    elapsed = time.perf_counter() - start
    ok = stationary_hits >= 8 and drift_hits >= 8 and elapsed < 300
    criterion(6, "ABO tracking", ok,
              f"stationary |theta_60 - 0.3| <= 0.05 in {stationary_hits}/10 (need 8); drift mean "
              f"error < 0.1 in {drift_hits}/10 (need 8, worst {max(drift_errors):.3f}); "
              f"{elapsed:.0f} s < 300 s")
    assert ok


# --- 7 ------------------------------------------------------------------------


@pytest.mark.slow
def test_c07_adaptive_gain(criterion):
    start = time.perf_counter()
    grid = np.linspace(0.0, 1.5, 21)
    wins, margins = 0, []
    for seed in range(10):
        market = regime_switch_market(seed=seed)
        tuned = run(parse_config(f"strategy = pamr\ndataset = x\noracle = true\nseed = {seed}\n"), market)
        static = max(
            run(parse_config(f"strategy = pamr\ndataset = x\nparam.eps = {float(eps)!r}\n"), market).cumulative_wealth
            for eps in grid
        )
        wins += tuned.cumulative_wealth >= static
        margins.append(tuned.cumulative_wealth / static)
    elapsed = time.perf_counter() - start
    ok = wins >= 7 and elapsed < 600
    criterion(7, "end-to-end adaptive gain", ok,
              f"PAMR-O CW >= best of 21 static eps in {wins}/10 seeds (need 7; median ratio "
              f"{np.median(margins):.2f}); {elapsed:.0f} s < 600 s")
    assert ok


# --- 8 ------------------------------------------------------------------------

PUBLISHED_CW = {
    "market": {"djia": 0.76, "sp500": 1.34, "tse": 1.61, "msci": 0.91},
    "bs": {"djia": 1.19, "sp500": 3.78, "tse": 6.28, "msci": 1.50},
    "bcrp": {"djia": 1.24, "sp500": 4.04, "tse": 6.78, "msci": 1.51},
    "eg": {"djia": 0.81, "sp500": 1.63, "tse": 1.59, "msci": 0.93},
    "ons": {"djia": 1.53, "sp500": 3.34, "tse": 1.61, "msci": 0.86},
}
TUNED = ("eg", "ons", "pamr", "cwmr", "olmar")


def test_c08_table_reproduction(criterion):
    data_dir = os.environ.get("OLPS_DATA_DIR")
    files = {name: Path(data_dir or ".") / f"{name}.csv" for name in ("djia", "sp500", "tse", "msci")}
    if not data_dir or not all(p.exists() for p in files.values()):
        criterion(8, "published-table reproduction", None,
                  "original datasets not supplied (set OLPS_DATA_DIR); conditional criterion not run")
        pytest.skip("canonical datasets not available")
    datasets = {name: load_csv(path) for name, path in files.items()}
    worst, failures = 0.0, []
    for strat, row in PUBLISHED_CW.items():
        for ds, expected in row.items():
            cw = run(parse_config(f"strategy = {strat}\ndataset = x\n"), datasets[ds]).cumulative_wealth
            worst = max(worst, abs(cw - expected))
            if abs(cw - expected) > 0.03:
                failures.append(f"{strat}/{ds} {cw:.3f} vs {expected}")
    detail = f"static rows max |CW - table| {worst:.3f} <= 0.03"
    if os.environ.get("OLPS_FULL_TABLES") == "1":
        for strat in TUNED:
            for ds, series in datasets.items():
                static = run(parse_config(f"strategy = {strat}\ndataset = x\n"), series).cumulative_wealth
                tuned = run(parse_config(f"strategy = {strat}\ndataset = x\noracle = true\n"), series)
                if tuned.cumulative_wealth < 0.5 * static:
                    failures.append(f"{strat.upper()}-O/{ds} {tuned.cumulative_wealth:.3f} < 0.5 x {static:.3f}")
        detail += "; oracle rows >= 0.5 x static"
    else:
        detail += "; oracle rows not run (set OLPS_FULL_TABLES=1)"
    ok = not failures
    criterion(8, "published-table reproduction", ok, detail + ("" if ok else f"; failures: {failures}"))
    assert ok


# --- 9 ------------------------------------------------------------------------


def t_upper_tail(t, df):
    log_c = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    return quad(lambda u: math.exp(log_c - (df + 1) / 2 * math.log1p(u * u / df)), t, math.inf,
                epsabs=1e-14, epsrel=1e-12)[0]


def test_c09_ttest_contract(criterion):
    rng = np.random.default_rng(9)
    market = np.exp(rng.normal(0.0, 0.01, 507))
    same = active_return_ttest(market, market)
    z = rng.normal(size=507)
    z = (z - z.mean()) / z.std(ddof=1)
    strategy = market + 1e-3 + 1e-2 * z  # daily edge 1e-3, volatility 1e-2
    res = active_return_ttest(strategy, market)
    oracle_p = t_upper_tail(res.t_stat, 506)
    ok = (same.t_stat, same.p_value) == (0.0, 0.5) and res.p_value < 0.05 and abs(res.p_value - oracle_p) < 1e-10
    criterion(9, "t-test contract", ok,
              f"identical -> t={same.t_stat}, p={same.p_value}; edge case t={res.t_stat:.4f}, "
              f"p={res.p_value:.5f} < 0.05 (independent CDF p={oracle_p:.5f})")
    assert ok


# --- 10 -----------------------------------------------------------------------


def test_c10_determinism(criterion, tmp_path):
    market = window(regime_switch_market(seed=7), 0, 80)
    configs = {
        "static": "strategy = olmar\ndataset = x\nseed = 5\n",
        "oracle": "strategy = olmar\ndataset = x\noracle = true\nseed = 5\n",
    }
    mismatched, compared = [], 0
    for label, text in configs.items():
        for attempt in ("first", "second"):
            emit_report(run(parse_config(text), market), tmp_path / label / attempt)
        for path in sorted((tmp_path / label / "first").iterdir()):
            compared += 1
            if path.read_bytes() != (tmp_path / label / "second" / path.name).read_bytes():
                mismatched.append(f"{label}/{path.name}")
    ok = not mismatched and compared == 9
    criterion(10, "determinism", ok,
              f"{compared - len(mismatched)}/{compared} report CSVs byte-identical across two runs")
    assert ok
