"""Spatiotemporal Gaussian-process regression over (theta, t) -> log metric.

The covariance is a product of a rational-quadratic kernel over the
strategy parameters and a temporal kernel that sums an exponential
(Ornstein-Uhlenbeck) term with a rational-quadratic term:

    k((th, t), (th', t')) = kp(th, th') * kt(t, t')
    kp = sf^2 * prod_i (1 + d_i^2 / (2 a_i l_i^2)) ** -a_i
    kt = exp(-|t - t'| / l) + (1 + (t - t')^2 / (2 a l^2)) ** -a

Hyperparameters are fitted by maximizing the log marginal likelihood
plus log hyper-prior densities (log-normal on the parameter-space
kernel and the noise, Gamma on the temporal kernel).
"""

from __future__ import annotations

from typing import Callable

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, lapack, solve_triangular
from scipy.optimize import minimize
from scipy.special import gammaln

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LOG2PI = math.log(2.0 * math.pi)


class GPFitError(RuntimeError):
    """The kernel matrix could not be factorized even with maximal jitter."""


@dataclass(frozen=True)
class KernelHyperparams:
    sigma_f: float
    lengthscales: np.ndarray
    alphas: np.ndarray
    temporal_l: float
    temporal_alpha: float
    noise_sigma: float
    # separate lengthscale for the temporal RQ term; None shares temporal_l
    temporal_l_rq: float | None = None

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        al = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        if ls.shape != al.shape:
            raise ValueError("need one alpha per lengthscale")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "alphas", al)
        vals = [self.sigma_f, self.temporal_l, self.temporal_alpha, self.noise_sigma]
        vals += ls.tolist() + al.tolist()
        if self.temporal_l_rq is not None:
            vals.append(self.temporal_l_rq)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError("kernel hyperparameters must be positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @property
    def split_temporal(self) -> bool:
        return self.temporal_l_rq is not None

    @property
    def rq_temporal_l(self) -> float:
        return self.temporal_l if self.temporal_l_rq is None else self.temporal_l_rq

    @property
    def prior_variance(self) -> float:
        return 2.0 * self.sigma_f**2

    def to_log_vector(self) -> np.ndarray:
        parts = [[self.sigma_f], self.lengthscales, self.alphas, [self.temporal_l, self.temporal_alpha]]
        if self.split_temporal:
            parts.append([self.temporal_l_rq])
        parts.append([self.noise_sigma])
        return np.log(np.concatenate([np.asarray(p, dtype=float) for p in parts]))

    @classmethod
    def from_log_vector(cls, vec, dim: int, split_temporal: bool = False) -> "KernelHyperparams":
        v = np.exp(np.asarray(vec, dtype=float))
        i = 1 + 2 * dim
        return cls(
            sigma_f=v[0],
            lengthscales=v[1 : 1 + dim],
            alphas=v[1 + dim : i],
            temporal_l=v[i],
            temporal_alpha=v[i + 1],
            temporal_l_rq=v[i + 2] if split_temporal else None,
            noise_sigma=v[-1],
        )

    @classmethod
    def default(cls, dim: int, split_temporal: bool = False, **overrides) -> "KernelHyperparams":
        base = dict(
            sigma_f=1.0,
            lengthscales=np.full(dim, 0.3),
            alphas=np.ones(dim),
            temporal_l=1.0,
            temporal_alpha=1.0,
            noise_sigma=0.1,
            temporal_l_rq=1.0 if split_temporal else None,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class HyperPriors:
    """Log-normal(mu, sigma) on sf, l_i, a_i and noise; Gamma(shape, scale) on temporal l, a."""

    lognormal_mu: float = 0.0
    lognormal_sigma: float = 1.0
    gamma_shape: float = 2.0
    gamma_scale: float = 1.0


@dataclass
class GPDataset:
    """Training rows (theta, t) with log-metric targets."""

    params: np.ndarray  # n x D
    times: np.ndarray  # n
    targets: np.ndarray  # n
    capacity: int = 300

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.ndim == 1:
            self.params = self.params[:, None]
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        n = self.targets.size
        if self.params.shape[0] != n or self.times.size != n:
            raise ValueError("params, times and targets must have the same length")
        if n > self.capacity:
            raise ValueError(f"{n} rows exceed window capacity {self.capacity}")
        if n > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("times must be nondecreasing")

    def __len__(self) -> int:
        return self.targets.size

    @property
    def inputs(self) -> np.ndarray:
        return np.column_stack([self.params, self.times])


# --- kernels ------------------------------------------------------------------


def k_param(theta, theta2, hp: KernelHyperparams) -> float:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    theta2 = np.atleast_1d(np.asarray(theta2, dtype=float))
    if theta.size != hp.dim or theta2.size != hp.dim:
        raise ValueError(f"expected {hp.dim}-dimensional parameters")
    u = (theta - theta2) ** 2 / (2.0 * hp.alphas * hp.lengthscales**2)
    return float(hp.sigma_f**2 * np.prod((1.0 + u) ** -hp.alphas))


def k_temporal(t, t2, hp: KernelHyperparams) -> float:
    r = abs(float(t) - float(t2))
    l_rq = hp.rq_temporal_l
    v = r * r / (2.0 * hp.temporal_alpha * l_rq**2)
    return math.exp(-r / hp.temporal_l) + (1.0 + v) ** -hp.temporal_alpha


def k_joint(a, b, hp: KernelHyperparams) -> float:
    """Covariance of two (theta..., t) points; the last coordinate is time."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return k_param(a[:-1], b[:-1], hp) * k_temporal(a[-1], b[-1], hp)


def param_cross(X1, X2, hp: KernelHyperparams) -> np.ndarray:
    X1 = np.asarray(X1, dtype=float).reshape(-1, hp.dim)
    X2 = np.asarray(X2, dtype=float).reshape(-1, hp.dim)
    out = np.full((X1.shape[0], X2.shape[0]), hp.sigma_f**2)
    for i in range(hp.dim):
        d2 = (X1[:, i, None] - X2[None, :, i]) ** 2
        out *= np.exp(-hp.alphas[i] * np.log1p(d2 / (2.0 * hp.alphas[i] * hp.lengthscales[i] ** 2)))
    return out


def temporal_cross(t1, t2, hp: KernelHyperparams) -> np.ndarray:
    r = np.abs(np.asarray(t1, dtype=float).ravel()[:, None] - np.asarray(t2, dtype=float).ravel()[None, :])
    v = r**2 / (2.0 * hp.temporal_alpha * hp.rq_temporal_l**2)
    return np.exp(-r / hp.temporal_l) + np.exp(-hp.temporal_alpha * np.log1p(v))


def joint_cross(X1, t1, X2, t2, hp: KernelHyperparams) -> np.ndarray:
    return param_cross(X1, X2, hp) * temporal_cross(t1, t2, hp)


class _PairCache:
    """Hyperparameter-independent pairwise distances over the upper triangle."""

    def __init__(self, X, t):
        n = X.shape[0]
        self.n = n
        self.iu = np.triu_indices(n, 1)
        i, j = self.iu
        self.d2 = [(X[i, k] - X[j, k]) ** 2 for k in range(X.shape[1])]
        self.r = np.abs(t[i] - t[j])


def _pair_parts(cache: _PairCache, hp: KernelHyperparams) -> dict:
    """Off-diagonal kernel values plus the intermediates its derivatives reuse."""
    us, logs = [], []
    log_kp = np.full(cache.r.shape, 2.0 * math.log(hp.sigma_f))
    for k in range(hp.dim):
        u = cache.d2[k] / (2.0 * hp.alphas[k] * hp.lengthscales[k] ** 2)
        lg = np.log1p(u)
        log_kp -= hp.alphas[k] * lg
        us.append(u)
        logs.append(lg)
    Kp = np.exp(log_kp)
    r = cache.r
    E = np.exp(-r / hp.temporal_l)
    v = r * r / (2.0 * hp.temporal_alpha * hp.rq_temporal_l**2)
    lv = np.log1p(v)
    R = np.exp(-hp.temporal_alpha * lv)
    return {"Kp": Kp, "K": Kp * (E + R), "u": us, "log_u": logs, "E": E, "R": R, "v": v, "lv": lv}


def _temporal_factors(parts: dict, r: np.ndarray, hp: KernelHyperparams):
    """Derivatives of the temporal factor w.r.t. its log hyperparameters."""
    v, lv, E, R = parts["v"], parts["lv"], parts["E"], parts["R"]
    v_ratio = v / (1.0 + v)
    dE = E * r / hp.temporal_l
    dR_l = R * (2.0 * hp.temporal_alpha * v_ratio)
    dR_a = R * (hp.temporal_alpha * (v_ratio - lv))
    if hp.split_temporal:
        return [dE, dR_a, dR_l]
    return [dE + dR_l, dR_a]


def _pair_terms(cache: _PairCache, hp: KernelHyperparams):
    """Off-diagonal kernel values and derivatives w.r.t. log hyperparameters.

    Returns ``(k_off, dk_off)``; ``dk_off`` follows ``to_log_vector`` order
    without the noise entry. On the diagonal the kernel is 2 sf^2 and only
    the amplitude derivative is nonzero.
    """
    parts = _pair_parts(cache, hp)
    K, Kp = parts["K"], parts["Kp"]
    grads = [2.0 * K]
    for k in range(hp.dim):
        u = parts["u"][k]
        grads.append(K * (2.0 * hp.alphas[k] * u / (1.0 + u)))
    for k in range(hp.dim):
        u = parts["u"][k]
        grads.append(K * (hp.alphas[k] * (u / (1.0 + u) - parts["log_u"][k])))
    grads += [Kp * d for d in _temporal_factors(parts, cache.r, hp)]
    return K, grads


def _pair_contract(parts: dict, cache: _PairCache, hp: KernelHyperparams, W: np.ndarray) -> list[float]:
    """``W @ dk`` for every off-diagonal derivative without materializing them."""
    WK = W * parts["K"]
    out = [2.0 * float(WK.sum())]
    ratio = [float(WK @ (u / (1.0 + u))) for u in parts["u"]]
    out += [2.0 * hp.alphas[k] * ratio[k] for k in range(hp.dim)]
    out += [hp.alphas[k] * (ratio[k] - float(WK @ parts["log_u"][k])) for k in range(hp.dim)]
    WKp = W * parts["Kp"]
    out += [float(WKp @ d) for d in _temporal_factors(parts, cache.r, hp)]
    return out


def _gram_with_grads(X, t, hp: KernelHyperparams, cache: _PairCache | None = None):
    """Noise-free Gram matrix and its derivatives w.r.t. log hyperparameters.

    Derivatives follow ``to_log_vector`` order, excluding the noise term.
    """
    cache = cache or _PairCache(X, t)
    k_off, dk_off = _pair_terms(cache, hp)
    n = cache.n

    def full(off, diag):
        M = np.zeros((n, n))
        M[cache.iu] = off
        M = M + M.T
        M[np.diag_indices(n)] = diag
        return M

    diag_k = hp.prior_variance
    grads = [full(dk_off[0], 2.0 * diag_k)] + [full(d, 0.0) for d in dk_off[1:]]
    return full(k_off, diag_k), grads


def gram(X, t, hp: KernelHyperparams) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(-1, hp.dim)
    return joint_cross(X, t, X, t, hp)


def _factorize(K: np.ndarray, jitter_ladder=JITTER_LADDER):
    """Cholesky with an escalating diagonal jitter; returns (L, jitter)."""
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    scale = float(np.mean(np.diag(K))) or 1.0
    for jitter in jitter_ladder:
        try:
            L = cholesky(K + jitter * scale * np.eye(K.shape[0]), lower=True, check_finite=False)
            return L, jitter * scale
        except LinAlgError:
            continue
    raise GPFitError("kernel matrix not factorizable after maximal jitter")


# --- hyper-priors -------------------------------------------------------------


def _prior_masks(dim: int, split_temporal: bool):
    n_temporal = 3 if split_temporal else 2
    lognormal = np.array([True] * (1 + 2 * dim) + [False] * n_temporal + [True])
    return lognormal, ~lognormal


def log_prior(log_vec, dim: int, priors: HyperPriors, split_temporal: bool = False):
    """Sum of log hyper-prior densities (in the positive parameter) and gradient in log space."""
    phi = np.asarray(log_vec, dtype=float)
    ln_mask, gam_mask = _prior_masks(dim, split_temporal)
    mu, s = priors.lognormal_mu, priors.lognormal_sigma
    k, scale = priors.gamma_shape, priors.gamma_scale

    x = phi[ln_mask]
    value = np.sum(-x - math.log(s * math.sqrt(2.0 * math.pi)) - (x - mu) ** 2 / (2.0 * s * s))
    p = np.exp(phi[gam_mask])
    value += np.sum((k - 1.0) * phi[gam_mask] - p / scale - gammaln(k) - k * math.log(scale))

    grad = np.empty_like(phi)
    grad[ln_mask] = -1.0 - (x - mu) / (s * s)
    grad[gam_mask] = (k - 1.0) - p / scale
    return float(value), grad


def log_marginal_likelihood(dataset: GPDataset, hp: KernelHyperparams, with_grad: bool = True,
                            cache: _PairCache | None = None):
    X, t, y = dataset.params, dataset.times, dataset.targets
    n = y.size
    cache = cache or _PairCache(X, t)
    parts = _pair_parts(cache, hp)
    k_off = parts["K"]
    K = np.empty((n, n))
    K[cache.iu] = k_off
    K.T[cache.iu] = k_off
    K[np.diag_indices(n)] = hp.prior_variance + hp.noise_sigma**2
    L, jitter = _factorize(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    value = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG2PI
    if not with_grad:
        return value, None
    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise GPFitError("inverse from Cholesky factor failed")
    # dpotri fills the lower triangle only
    W_off = alpha[cache.iu[0]] * alpha[cache.iu[1]] - Kinv.T[cache.iu]
    W_diag = alpha**2 - np.diag(Kinv)
    trace_w = float(W_diag.sum())
    grad = _pair_contract(parts, cache, hp, W_off)
    grad[0] += trace_w * hp.prior_variance
    grad.append(trace_w * hp.noise_sigma**2)
    return value, np.asarray(grad)


def log_evidence(dataset: GPDataset, hp: KernelHyperparams, priors: HyperPriors | None = None,
                 with_grad: bool = True, cache: _PairCache | None = None):
    """MAP objective: log marginal likelihood plus log hyper-prior terms.

    Returns ``(value, gradient)``; the gradient is with respect to the
    log-hyperparameter vector of ``hp.to_log_vector()``.
    """
    priors = priors or HyperPriors()
    lml, g = log_marginal_likelihood(dataset, hp, with_grad, cache)
    lp, gp = log_prior(hp.to_log_vector(), hp.dim, priors, hp.split_temporal)
    if not with_grad:
        return lml + lp, None
    return lml + lp, g + gp


def _log_bounds(dim: int, split_temporal: bool):
    bounds = [(-12.0, 5.0)]  # sigma_f
    bounds += [(-7.0, 7.0)] * dim  # lengthscales (scaled inputs)
    bounds += [(-6.0, 6.0)] * dim  # alphas
    bounds += [(-7.0, 9.0), (-6.0, 6.0)]  # temporal l, alpha
    if split_temporal:
        bounds += [(-7.0, 9.0)]
    bounds += [(-16.0, 3.0)]  # noise
    return bounds


def initial_hyperparams(dataset: GPDataset, split_temporal: bool = False) -> KernelHyperparams:
    """Data-informed starting point for the MAP search."""
    y = dataset.targets
    rms = float(np.sqrt(np.mean(y**2))) if y.size else 1.0
    spread = float(np.std(y)) if y.size > 1 else rms
    return KernelHyperparams.default(
        dataset.params.shape[1],
        split_temporal=split_temporal,
        sigma_f=max(rms, 1e-4),
        noise_sigma=max(0.3 * spread, 1e-5),
    )


def fit_map(
    dataset: GPDataset,
    init: KernelHyperparams | None = None,
    priors: HyperPriors | None = None,
    n_restarts: int = 5,
    rng: np.random.Generator | int | None = None,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> KernelHyperparams:
    """MAP hyperparameters by L-BFGS-B from ``init`` plus random restarts.

    The returned point never scores below ``init``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    priors = priors or HyperPriors()
    init = init or initial_hyperparams(dataset)
    rng = np.random.default_rng(rng)
    dim, split = init.dim, init.split_temporal
    bounds = _log_bounds(dim, split)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def negative(vec):
        hp = KernelHyperparams.from_log_vector(vec, dim, split)
        try:
            value, grad = log_evidence(dataset, hp, priors, cache=cache)
        except GPFitError:
            return 1e25, np.zeros_like(vec)
        if not math.isfinite(value):
            return 1e25, np.zeros_like(vec)
        return -value, -grad

    cache = _PairCache(dataset.params, dataset.times)
    x0 = np.clip(init.to_log_vector(), lo, hi)
    f_init, g_init = negative(x0)
    best_x, best_f = x0, f_init
    if np.max(np.abs(g_init)) < gtol:
        return KernelHyperparams.from_log_vector(best_x, dim, split)

    starts = [x0] + [
        np.clip(x0 + rng.normal(0.0, 1.0, size=x0.size), lo, hi) for _ in range(n_restarts)
    ]
    for start in starts:
        try:
            res = minimize(
                negative, start, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": max_iter, "gtol": gtol},
            )
        except (ValueError, FloatingPointError) as exc:
            logger.debug("MAP restart failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    if best_f >= 1e25:
        raise GPFitError("no restart produced a finite MAP objective")
    return KernelHyperparams.from_log_vector(best_x, dim, split)


# --- posterior ----------------------------------------------------------------


@dataclass(frozen=True)
class GPPosterior:
    """Conditioned GP; immutable once built so predictions can run concurrently."""

    hyperparams: KernelHyperparams
    params: np.ndarray
    times: np.ndarray
    chol: np.ndarray | None
    alpha: np.ndarray | None
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return 0 if self.alpha is None else self.alpha.size

    def predict(self, params, times):
        """Latent mean and variance at query rows (no observation noise)."""
        hp = self.hyperparams
        Q = np.asarray(params, dtype=float).reshape(-1, hp.dim)
        tq = np.broadcast_to(np.asarray(times, dtype=float).ravel(), (Q.shape[0],))
        prior_var = np.full(Q.shape[0], hp.prior_variance)
        if self.n == 0:
            return np.zeros(Q.shape[0]), prior_var
        Ks = joint_cross(Q, tq, self.params, self.times, hp)
        mean = Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = prior_var - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def at_time(self, t: float) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]:
        """Predictor for many parameter rows at one shared time.

        The temporal factor is common to every query row, so it is folded
        into a precomputed scaled inverse factor once.
        """
        hp = self.hyperparams
        if self.n == 0:
            return lambda params: self.predict(params, t)
        kt = temporal_cross([t], self.times, hp)[0]
        weighted_alpha = kt * self.alpha
        # L^{-1} diag(kt): each query costs a matrix product instead of a solve
        M = solve_triangular(self.chol, np.diag(kt), lower=True, check_finite=False)

        def predict(params):
            Q = np.asarray(params, dtype=float).reshape(-1, hp.dim)
            Kp = param_cross(Q, self.params, hp)
            mean = Kp @ weighted_alpha
            v = M @ Kp.T
            var = hp.prior_variance - np.einsum("ij,ij->j", v, v)
            return mean, np.maximum(var, 0.0)

        return predict


def condition(dataset: GPDataset, hp: KernelHyperparams) -> GPPosterior:
    """Factorize the Gram matrix for fixed hyperparameters."""
    if len(dataset) == 0:
        return GPPosterior(hp, np.empty((0, hp.dim)), np.empty(0), None, None)
    K = gram(dataset.params, dataset.times, hp)
    K[np.diag_indices_from(K)] += hp.noise_sigma**2
    L, jitter = _factorize(K)
    alpha = cho_solve((L, True), dataset.targets, check_finite=False)
    return GPPosterior(hp, dataset.params.copy(), dataset.times.copy(), L, alpha, jitter)


def predict(posterior: GPPosterior, params, times):
    return posterior.predict(params, times)


# --- diagnostics --------------------------------------------------------------


@dataclass(frozen=True)
class TemporalDiagnostic:
    time_varying: bool
    ratio: float


def temporal_lengthscale_diagnostic(
    temporal_l: float | KernelHyperparams, horizon: float, ratio_threshold: float = 1.0
) -> TemporalDiagnostic:
    """Flag time variation when the temporal lengthscale is short relative to the horizon.

    ``temporal_l`` and ``horizon`` must be in the same units.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(temporal_l, KernelHyperparams):
        temporal_l = temporal_l.temporal_l
    ratio = float(temporal_l) / float(horizon)
    return TemporalDiagnostic(time_varying=bool(ratio < ratio_threshold), ratio=ratio)


@dataclass
class InputScaler:
    """Affine map of (theta, t) onto [0, 1] per dimension.

    Time is scaled by the span from the first window row to ``t_ref``
    (the next evaluation time), so the query sits at 1.
    """

    lo: np.ndarray
    hi: np.ndarray
    t0: float = 0.0
    t_span: float = 1.0

    @classmethod
    def for_window(cls, bounds, times, t_ref: float) -> "InputScaler":
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        times = np.asarray(times, dtype=float)
        t0 = float(times.min()) if times.size else float(t_ref) - 1.0
        span = max(float(t_ref) - t0, 1.0)
        return cls(b[:, 0].copy(), b[:, 1].copy(), t0, span)

    def params(self, theta) -> np.ndarray:
        width = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (np.asarray(theta, dtype=float) - self.lo) / width

    def time(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=float) - self.t0) / self.t_span

    def unscale_time_length(self, length: float) -> float:
        return float(length) * self.t_span


def with_noise(hp: KernelHyperparams, noise_sigma: float) -> KernelHyperparams:
    return replace(hp, noise_sigma=noise_sigma)
