"""Run configuration: one YAML document, every key overridable with
``--set section.key=value``. Defaults: the box
``20 <= d_i <= 1200``, ten repetitions, time-score thresholds of 10% for the
random search and 5% for traversal and prediction, and a traversal step of 10.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import yaml

from .anomaly import Thresholds
from .execution import ConfigError, EfficiencyProfile, MachineConfig, MeasurementProtocol
from .experiments import RandomSearchConfig, SearchSpace
from .expr import ExpressionError, ExpressionKind

DEFAULTS: dict[str, Any] = {
    "expression": "chain4",
    "seed": 0,
    "output_dir": "runs",
    "run_id": None,
    "space": {"lower": 20, "upper": 1200, "step": 10},
    "thresholds": {"search": 0.10, "traversal": 0.05, "prediction": 0.05},
    "search": {"target_anomalies": 100, "max_samples": 100_000},
    "explore": {"overshoot": 0, "limit": None},
    "protocol": {"repetitions": 10, "flush": True, "flush_multiplier": 4.0},
    "backend": {
        "name": "synthetic",
        "profile": {
            "gemm": {"e_max": 0.9, "tau": 100.0, "steps": []},
            "syrk": {"e_max": 0.8, "tau": 120.0, "steps": []},
            "symm": {"e_max": 0.8, "tau": 120.0, "steps": []},
            "copy_bandwidth": 1.0e10,
            "noise_stddev": 0.0,
            "rng_seed": 0,
        },
    },
    "machine": {"peak_flops": 1.28e11, "llc_bytes": 32 * 2**20, "thread_count": 1},
    "bench": {"sizes": list(range(100, 2401, 100)), "kernels": ["gemm", "syrk", "symm"]},
    "report": {"histogram_bin_width": 100},
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and key != "profile":
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        elif key == "profile":
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            merged = copy.deepcopy(base[key])
            for k, v in value.items():
                if k not in merged:
                    raise ConfigError(f"unknown config key {where}.{k!r}")
                merged[k] = {**merged[k], **v} if isinstance(merged[k], dict) else v
            out[key] = merged
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``"a.b=3"`` -> ``{"a": {"b": 3}}``; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value: {text!r}")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else None
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class Config:
    data: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str | dict] = ()) -> "Config":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                loaded = yaml.safe_load(Path(path).read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            data = _merge(data, loaded)
        for o in overrides:
            data = _merge(data, parse_override(o) if isinstance(o, str) else o)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def with_overrides(self, *overrides: str | dict) -> "Config":
        data = self.data
        for o in overrides:
            data = _merge(data, parse_override(o) if isinstance(o, str) else o)
        cfg = Config(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.kind
            self.space
            self.search_config
            self.thresholds("traversal")
            self.thresholds("prediction")
            self.protocol
            self.machine
            self.profile
        except (ExpressionError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.data["backend"]["name"] not in ("synthetic", "blas", "real"):
            raise ConfigError(f"unknown backend {self.data['backend']['name']!r}")
        if self.data["explore"]["overshoot"] < 0:
            raise ConfigError("explore.overshoot must be >= 0")

    @property
    def kind(self) -> ExpressionKind:
        return ExpressionKind.parse(str(self.data["expression"]))

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def space(self) -> SearchSpace:
        s = self.data["space"]
        n = self.kind.ndims

        def per_dim(v):
            v = list(v) if isinstance(v, (list, tuple)) else [v] * n
            if len(v) != n:
                raise ConfigError(f"space bounds need {n} entries")
            return tuple(int(x) for x in v)

        return SearchSpace(per_dim(s["lower"]), per_dim(s["upper"]), int(s["step"]))

    def thresholds(self, which: str) -> Thresholds:
        return Thresholds(float(self.data["thresholds"][which]))

    @property
    def search_config(self) -> RandomSearchConfig:
        s = self.data["search"]
        return RandomSearchConfig(self.seed, int(s["target_anomalies"]), int(s["max_samples"]),
                                  self.thresholds("search"))

    @property
    def protocol(self) -> MeasurementProtocol:
        p = self.data["protocol"]
        return MeasurementProtocol(int(p["repetitions"]), bool(p["flush"]), float(p["flush_multiplier"]))

    @property
    def machine(self) -> MachineConfig:
        m = self.data["machine"]
        return MachineConfig(float(m["peak_flops"]), int(m["llc_bytes"]), int(m["thread_count"]))

    @property
    def profile(self) -> EfficiencyProfile:
        p = copy.deepcopy(self.data["backend"]["profile"])
        p["copy_bandwidth"] = float(p["copy_bandwidth"])
        return EfficiencyProfile.from_dict(p)

    @property
    def backend_name(self) -> str:
        return self.data["backend"]["name"]

    def fingerprint(self) -> dict:
        """Config content that determines results (output location excluded)."""
        d = copy.deepcopy(self.data)
        d.pop("output_dir", None)
        d.pop("run_id", None)
        return d
