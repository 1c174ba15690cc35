"""Parameter records read from YAML (or JSON) mappings.

Each class takes a mapping and fills every attribute from it, falling back to
its defaults; unknown keys are rejected so that typos do not pass silently.
"""

from __future__ import annotations

import logging
from typing import Any, Mapping, Optional

import yaml

from nu_sampler.model import Algorithm
from nu_sampler.utils.errors import ConfigError

logger = logging.getLogger(__name__)


def load_config(path) -> dict:
    """Read a YAML or JSON mapping; an empty file gives an empty mapping."""
    try:
        with open(path, "r") as file:
            params = yaml.safe_load(file)
    except OSError as error:
        raise ConfigError(f"cannot read config file {path}: {error}") from error
    except yaml.YAMLError as error:
        raise ConfigError(f"{path} is not valid YAML or JSON: {error}") from error
    if params is None:
        return {}
    if not isinstance(params, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    logger.debug("loaded %s: %s", path, sorted(params))
    return params


def check_keys(params: Mapping, allowed, owner: str):
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {owner} keys: {', '.join(unknown)}")


def positive(value: Any, name: str, kind=float):
    try:
        converted = kind(value)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"{name} must be a {kind.__name__}, got {value!r}") from error
    if kind is int and converted != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not converted > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return converted


def non_negative_int(value: Any, name: str) -> int:
    if value == 0:
        return 0
    return positive(value, name, int)


class FitParameters:
    """Settings of one group of chains on a fixed data set.

    Chain ``i`` starts at ``inits[i % len(inits)]``; ``chains`` defaults to one chain
    per starting value.
    """

    DEFAULTS = {
        "lambda": 0.2,
        "iterations": 10_000,
        "burn_in": 1_000,
        "k_aa": 20,
        "inits": [0.5, 2.0, 10.0, 100.0],
        "chains": None,
        "algorithm": "asis",
        "seed": 0,
    }

    def __init__(self, params: Optional[Mapping] = None) -> None:
        params = dict(params or {})
        check_keys(params, self.DEFAULTS, "fit")
        merged = {**self.DEFAULTS, **params}
        self.nu_rate = positive(merged["lambda"], "lambda")
        self.iterations = positive(merged["iterations"], "iterations", int)
        self.burn_in = non_negative_int(merged["burn_in"], "burn_in")
        self.k_aa = positive(merged["k_aa"], "k_aa", int)
        self.inits = [positive(value, "inits") for value in merged["inits"]]
        if not self.inits:
            raise ConfigError("inits must not be empty")
        chains = merged["chains"]
        self.chains = len(self.inits) if chains is None else positive(chains, "chains", int)
        self.algorithm = Algorithm.parse(merged["algorithm"])
        self.seed = non_negative_int(merged["seed"], "seed")

    def as_dict(self) -> dict:
        return {
            "lambda": self.nu_rate,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "k_aa": self.k_aa,
            "inits": list(self.inits),
            "chains": self.chains,
            "algorithm": self.algorithm.value,
            "seed": self.seed,
        }


class ApplicationParameters:
    """Settings of the trend-cycle fits of the macroeconomic series."""

    DEFAULTS = {
        "lambda": 0.333,
        "iterations": 10_000,
        "burn_in": 1_000,
        "k_aa": 20,
        "log_transform": True,
        "raw_series": ["int.rate"],
        "algorithms": ["sa", "aa", "asis"],
        "series": None,
        "seed": 0,
    }

    def __init__(self, params: Optional[Mapping] = None) -> None:
        params = dict(params or {})
        check_keys(params, self.DEFAULTS, "application")
        merged = {**self.DEFAULTS, **params}
        self.nu_rate = positive(merged["lambda"], "lambda")
        self.iterations = positive(merged["iterations"], "iterations", int)
        self.burn_in = non_negative_int(merged["burn_in"], "burn_in")
        self.k_aa = positive(merged["k_aa"], "k_aa", int)
        self.log_transform = bool(merged["log_transform"])
        self.raw_series = [str(name) for name in merged["raw_series"] or []]
        self.algorithms = [Algorithm.parse(name) for name in merged["algorithms"]]
        self.series = None if merged["series"] is None else [str(name) for name in merged["series"]]
        self.seed = non_negative_int(merged["seed"], "seed")

    def as_dict(self) -> dict:
        return {
            "lambda": self.nu_rate,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "k_aa": self.k_aa,
            "log_transform": self.log_transform,
            "raw_series": list(self.raw_series),
            "algorithms": [algorithm.value for algorithm in self.algorithms],
            "series": self.series,
            "seed": self.seed,
        }
