"""Experiment configuration: flat ``key = value`` text files.

Recognized keys (all optional except ``strategy`` and ``dataset``)::

    name              label used in reports (default: strategy, plus "-O" with the oracle)
    dataset           CSV path, or synthetic:<generator>[:<seed>]
    dataset_format    relatives | prices
    strategy          market | bs | bcrp | eg | ons | pamr | cwmr | olmar
    oracle            true | false
    param.<name>      static parameter value
    bounds.<name>     "lo, hi" search range for the oracle
    kappa, window_capacity, n_init, n_restarts, n_restarts_warm,
    full_refit_below, refit_every, always_refit, split_temporal,
    ratio_threshold   oracle settings
    pso.particles, pso.iterations, pso.inertia, pso.cognitive,
    pso.social, pso.velocity_clamp
    prior.lognormal_mu, prior.lognormal_sigma, prior.gamma_shape,
    prior.gamma_scale
    periods_per_year, risk_free, exclude_warmup
    output_dir, seed

Blank lines and ``#`` comments are ignored. Relative paths resolve
against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .gp import HyperPriors
from .oracle import OracleConfig, PSOConfig
from .strategies import ROSTER, StrategyError, strategy_class


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    strategy: str
    dataset: str
    name: str = ""
    dataset_format: str = "relatives"
    oracle: bool = False
    params: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    oracle_config: OracleConfig = field(default_factory=OracleConfig)
    periods_per_year: int = 252
    risk_free: float = 0.0
    exclude_warmup: bool = False
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        self.strategy = self.strategy.lower()
        if self.strategy not in ROSTER:
            raise ConfigError(f"strategy {self.strategy!r} not in roster {ROSTER}")
        if self.dataset_format not in ("relatives", "prices"):
            raise ConfigError("dataset_format must be 'relatives' or 'prices'")
        cls = strategy_class(self.strategy)
        known = set(cls.param_names())
        for key in list(self.params) + list(self.bounds):
            if key not in known:
                raise ConfigError(f"{self.strategy} has no parameter {key!r}")
        if self.oracle:
            if not cls.PARAMS:
                raise ConfigError(f"{self.strategy} has no tunable parameters for the oracle")
            # fall back to the strategy's default ranges for unspecified bounds
            merged = dict(cls.default_bounds())
            merged.update(self.bounds)
            self.bounds = merged
            for key, (lo, hi) in self.bounds.items():
                if not lo < hi:
                    raise ConfigError(f"bounds for {key} need lo < hi")
            # the oracle seed follows the experiment seed
            self.oracle_config = replace(self.oracle_config, seed=self.seed)
        if not self.name:
            self.name = self.strategy.upper() + ("-O" if self.oracle else "")

    def param_names(self) -> tuple[str, ...]:
        return strategy_class(self.strategy).param_names()

    def static_params(self) -> dict[str, float]:
        out = strategy_class(self.strategy).default_params()
        out.update(self.params)
        return out

    def bounds_array(self):
        return [self.bounds[n] for n in self.param_names()]


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _coerce(value: str, like, key: str):
    try:
        if isinstance(like, bool):
            return _bool(value, key)
        if isinstance(like, int):
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    raw = dict(parser["experiment"])

    top: dict = {}
    params: dict[str, float] = {}
    bounds: dict[str, tuple[float, float]] = {}
    oracle_kw: dict = {}
    pso_kw: dict = {}
    prior_kw: dict = {}
    oracle_defaults = OracleConfig()
    pso_defaults = PSOConfig()
    prior_defaults = HyperPriors()
    oracle_fields = {f.name for f in fields(OracleConfig)} - {"pso", "priors", "seed"}
    pso_fields = {f.name for f in fields(PSOConfig)}
    prior_fields = {f.name for f in fields(HyperPriors)}

    for key, value in raw.items():
        value = value.strip()
        if key.startswith("param."):
            params[key[6:]] = _coerce(value, 0.0, key)
        elif key.startswith("bounds."):
            parts = [p for p in value.replace(";", ",").split(",") if p.strip()]
            if len(parts) != 2:
                raise ConfigError(f"{key}: expected 'lo, hi'")
            bounds[key[7:]] = (_coerce(parts[0], 0.0, key), _coerce(parts[1], 0.0, key))
        elif key.startswith("pso."):
            sub = key[4:]
            if sub not in pso_fields:
                raise ConfigError(f"unknown key {key!r}")
            pso_kw[sub] = _coerce(value, getattr(pso_defaults, sub), key)
        elif key.startswith("prior."):
            sub = key[6:]
            if sub not in prior_fields:
                raise ConfigError(f"unknown key {key!r}")
            prior_kw[sub] = _coerce(value, getattr(prior_defaults, sub), key)
        elif key in oracle_fields:
            oracle_kw[key] = _coerce(value, getattr(oracle_defaults, key), key)
        elif key in ("strategy", "dataset", "name", "dataset_format", "output_dir"):
            top[key] = value
        elif key == "oracle":
            top[key] = _bool(value, key)
        elif key == "exclude_warmup":
            top[key] = _bool(value, key)
        elif key in ("periods_per_year", "seed"):
            top[key] = _coerce(value, 0, key)
        elif key == "risk_free":
            top[key] = _coerce(value, 0.0, key)
        else:
            raise ConfigError(f"unknown key {key!r}")

    for required in ("strategy", "dataset"):
        if required not in top:
            raise ConfigError(f"missing required key {required!r}")

    if base_dir is not None:
        base = Path(base_dir)
        ds = top["dataset"]
        if not ds.startswith("synthetic:") and not Path(ds).is_absolute():
            top["dataset"] = str(base / ds)
        if "output_dir" in top and not Path(top["output_dir"]).is_absolute():
            top["output_dir"] = str(base / top["output_dir"])

    try:
        oracle_config = OracleConfig(
            pso=PSOConfig(**pso_kw), priors=HyperPriors(**prior_kw), **oracle_kw
        )
        return ExperimentConfig(params=params, bounds=bounds, oracle_config=oracle_config, **top)
    except (StrategyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
