"""Harness configuration: one human-editable YAML file, schema-validated.

Every constant the underlying model leaves open lives here with a documented
default, so a run is fully determined by (config, seed).  Unknown keys and
out-of-range values are rejected with file context.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .defenses import StrategyConfig, StrategyKind
from .machines import DelayDistribution, MachineSpec
from .traffic import PackingMode, SimConfig, UserModel, make_sites


class ConfigError(Exception):
    """Invalid or unreadable configuration; CLI maps this to exit code 2."""


_DELAY_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["fixed", "exponential", "uniform"]},
        "value": {"type": "number", "minimum": 0},
        "rate": {"type": "number", "exclusiveMinimum": 0},
        "lo": {"type": "number", "minimum": 0},
        "hi": {"type": "number", "minimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "rtt": {"type": "number", "exclusiveMinimum": 0},
        "n_sessions": {"type": "integer", "minimum": 1},
        "user": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_u": {"type": "number", "exclusiveMinimum": 0},
                "clearnet_prob": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "sites": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "cell_count_range": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 6},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "site_seed": {"type": "integer", "minimum": 0},
            },
        },
        "packing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["identical", "asymmetric"]},
                "inflation_mean": {"type": "number", "minimum": 1},
                "inflation_sd": {"type": "number", "minimum": 0},
            },
        },
        "lifetimes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "exit": _DELAY_SCHEMA,
                "linger_after_use": _DELAY_SCHEMA,
            },
        },
        "scheduling_noise": {"type": "boolean"},
        "strategy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["prop999", "strawman", "pcp"]},
                "phi": {"type": "number", "minimum": 0},
                "lambda_u_estimate": {"type": "number", "exclusiveMinimum": 0},
                "prop999_lifetime": _DELAY_SCHEMA,
            },
        },
        "adversary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_len": {"type": "integer", "minimum": 1},
                "tree_max_depth": {"type": "integer", "minimum": 1},
                "tree_min_leaf": {"type": "integer", "minimum": 1},
                "classifiers": {
                    "type": "array",
                    "items": {"enum": ["tree", "knn", "bayes"]},
                },
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "id": {
                    "enum": ["exp1", "exp2", "exp3", "exp4", "exp5", "game"]
                },
                "scenario": {
                    "enum": ["multi-closed", "multi-open", "single-site"]
                },
                "site": {"type": "string"},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "grid": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number", "minimum": 0},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "sessions_per_class": {"type": "integer", "minimum": 2},
                "game_trials": {"type": "integer", "minimum": 1},
                "game_learning_traces": {"type": "integer", "minimum": 1},
            },
        },
        "machines": {"type": "array", "items": {"type": "object"}},
    },
}

DEFAULTS: dict = {
    "seed": 1,
    "rtt": 0.05,
    "n_sessions": 2000,
    "user": {"lambda_u": 4.0, "clearnet_prob": 0.5},
    "sites": {"count": 100, "cell_count_range": [24, 96], "site_seed": 7},
    "packing": {"mode": "identical", "inflation_mean": 1.15, "inflation_sd": 0.08},
    "lifetimes": {
        "exit": {"kind": "uniform", "lo": 600.0, "hi": 660.0},
        "linger_after_use": {"kind": "fixed", "value": 10.0},
    },
    "scheduling_noise": False,
    "strategy": {
        "kind": "pcp",
        "phi": 1.0,
        "lambda_u_estimate": 4.0,
        "prop999_lifetime": {"kind": "uniform", "lo": 600.0, "hi": 660.0},
    },
    "adversary": {
        "max_len": 120,
        "tree_max_depth": 20,
        "tree_min_leaf": 5,
        "classifiers": ["tree", "bayes"],
    },
    "experiment": {
        "id": "exp1",
        "scenario": "multi-open",
        "site": "site000",
        "train_fraction": 0.75,
        "grid": [
            [phi, c]
            for phi in (0.25, 0.5, 1.0, 2.0, 4.0)
            for c in (0.5, 0.7, 0.9)
        ],
        "sessions_per_class": 5000,
        "game_trials": 2000,
        "game_learning_traces": 200,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class HarnessConfig:
    """Validated configuration tree plus convenience constructors."""

    raw: dict

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def sim_config(self, **overrides) -> SimConfig:
        raw = self.raw
        sites = make_sites(
            raw["sites"]["count"],
            seed=raw["sites"]["site_seed"],
            cell_count_range=tuple(raw["sites"]["cell_count_range"]),
            inflation_mean=raw["packing"]["inflation_mean"],
            inflation_sd=raw["packing"]["inflation_sd"],
        )
        kwargs = dict(
            user=UserModel(
                lambda_u=raw["user"]["lambda_u"],
                clearnet_prob=raw["user"]["clearnet_prob"],
            ),
            sites=sites,
            rtt=raw["rtt"],
            n_sessions=raw["n_sessions"],
            packing_mode=PackingMode(raw["packing"]["mode"].capitalize()),
            lifetime_exit=DelayDistribution.from_config(raw["lifetimes"]["exit"]),
            linger_after_use=DelayDistribution.from_config(
                raw["lifetimes"]["linger_after_use"]
            ),
            seed=raw["seed"],
            scheduling_noise=raw["scheduling_noise"],
        )
        kwargs.update(overrides)
        return SimConfig(**kwargs)

    def strategy_config(self, **overrides) -> StrategyConfig:
        raw = self.raw["strategy"]
        kwargs = dict(
            kind=StrategyKind(raw["kind"]),
            phi=raw["phi"],
            lambda_u_estimate=raw["lambda_u_estimate"],
            prop999_lifetime=DelayDistribution.from_config(raw["prop999_lifetime"]),
            rtt=self.raw["rtt"],
        )
        kwargs.update(overrides)
        return StrategyConfig(**kwargs)

    def machine_specs(self) -> list[MachineSpec]:
        return [MachineSpec.from_config(m) for m in self.raw.get("machines", [])]

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def validate_config(raw: dict, source: str = "<config>") -> HarnessConfig:
    merged = _merge(DEFAULTS, raw or {})
    try:
        jsonschema.validate(merged, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: at {path}: {exc.message}") from exc
    lo, hi = merged["sites"]["cell_count_range"]
    if lo > hi:
        raise ConfigError(f"{source}: sites/cell_count_range must satisfy lo <= hi")
    return HarnessConfig(raw=merged)


def load_config(path: str | Path | None) -> HarnessConfig:
    """Load and validate a YAML config file; None yields pure defaults."""
    if path is None:
        return validate_config({}, "<defaults>")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML error at {where}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return validate_config(raw, str(path))
