"""Run configuration: ``section.key = value`` lines with ``#`` comments.

Every key has a default (see DEFAULTS); an unknown key is an error. Model
hyperparameters live under ``model.<family>.<param>``; a comma-separated
value there is a grid when tuning is enabled.
"""
from __future__ import annotations

import ast
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .models import DEFAULTS as MODEL_DEFAULTS, FAMILIES


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    # synthetic plant history
    "synth.enabled": True,
    "synth.seed": None,  # falls back to the run seed
    "synth.duration_days": 30,
    "synth.noise_sd": (1.4, 1.3, 0.4),
    "synth.duplicate_frac": 0.0,
    "synth.missing_frac": 0.0,
    "synth.negative_frac": 0.0,
    "synth.outlier_frac": 0.0,
    "synth.input_dir": "",  # raw stream directory read when synth is disabled
    # residence times (minutes) and join windows
    "align.kf_buffer": 1.0,
    "align.preheater": 16.0,
    "align.cooler": 20.0,
    "align.sampling_delay": 20.0,
    "align.hm_lag": 21.0,
    "align.window": 120.0,
    "align.kf_max_age": 60.0,
    "align.hm_max_age": 120.0,
    # cleaning
    "clean.lo": 0.0001,
    "clean.hi": 0.9999,
    "clean.quantile_method": "normal",
    # splitting
    "split.ratio": 0.8,
    "split.mode": "random",
    "split.holdout_months": 2,
    # training and tuning
    "tune.families": ("lr", "lasso", "ridge", "enet", "rf", "gbt", "svr", "gpr", "nn"),
    "tune.targets": ("alite", "belite", "ferrite"),
    "tune.feature_set": "all",
    "tune.enabled": False,
    "tune.k": 4,
    "tune.repeats": 1,
    # attribution
    "explain.enabled": True,
    "explain.family": "gbt",
    "explain.target": "alite",
    "explain.scope": "co",
    "explain.mode": "exact",
    "explain.background": 100,
    "explain.points": 25,
    "explain.n_samples": 2048,
    # reporting
    "report.radar_family": "svr",
    "report.hist_width": 0.5,
}

CHOICES: dict[str, tuple[str, ...]] = {
    "clean.quantile_method": ("linear", "normal"),
    "split.mode": ("random", "temporal"),
    "explain.scope": ("co", "all"),
    "explain.mode": ("exact", "sampled"),
}
SECTIONS = ("synth", "align", "clean", "split", "model", "tune", "explain", "report")


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    if "," in text:
        return tuple(_parse_value(t) for t in text.split(","))
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, value, default):
    """Match the default's type; tuples accept a single scalar."""
    if default is None or value is None:
        return value
    if isinstance(default, tuple):
        value = value if isinstance(value, tuple) else (value,)
        if default and isinstance(default[0], float):
            return tuple(float(v) for v in value)
        return tuple(str(v).strip() if not isinstance(v, (int, float)) else v for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, (bool, tuple)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return str(value)


def _model_default(key: str):
    parts = key.split(".")
    if len(parts) != 3 or parts[1] not in FAMILIES:
        raise ConfigError(f"unknown key {key!r}: expected model.<family>.<param>")
    family, param = parts[1], parts[2]
    if param not in MODEL_DEFAULTS[family]:
        raise ConfigError(f"unknown key {key!r}: {family} has no parameter {param!r}")
    return MODEL_DEFAULTS[family][param]


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))
    models: dict[str, dict[str, Any]] = field(default_factory=dict)  # family -> param -> value or grid tuple
    source: str = ""

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key.startswith("model."):
            default = _model_default(key)
            _, family, param = key.split(".")
            if isinstance(value, tuple):
                value = tuple(_coerce(key, v, default) for v in value)
            else:
                value = _coerce(key, value, default)
            self.models.setdefault(family, {})[param] = value
            return
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        value = _coerce(key, value, DEFAULTS[key])
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key}: {value!r} not in {CHOICES[key]}")
        self.values[key] = value

    def model_params(self, family: str) -> tuple[dict[str, Any], dict[str, tuple]]:
        """Fixed overrides and grid axes for ``family``."""
        fixed, grid = {}, {}
        for k, v in self.models.get(family, {}).items():
            if isinstance(v, tuple):
                grid[k] = v
            else:
                fixed[k] = v
        return fixed, grid

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def validate(self) -> RunConfig:
        unknown = [f for f in self["tune.families"] if f not in FAMILIES]
        if unknown:
            raise ConfigError(f"tune.families: unknown families {unknown}")
        if self["explain.family"] not in FAMILIES or self["report.radar_family"] not in FAMILIES:
            raise ConfigError("explain.family and report.radar_family must name model families")
        for t in self["tune.targets"]:
            if str(t).lower() not in ("alite", "belite", "ferrite"):
                raise ConfigError(f"tune.targets: unknown phase {t!r}")
        if not 0 < self["split.ratio"] < 1:
            raise ConfigError("split.ratio must lie in (0, 1)")
        if not 0 <= self["clean.lo"] < self["clean.hi"] <= 1:
            raise ConfigError("need 0 <= clean.lo < clean.hi <= 1")
        if self["tune.repeats"] < 1 or self["tune.k"] < 2:
            raise ConfigError("need tune.repeats >= 1 and tune.k >= 2")
        if not self["tune.enabled"]:
            grids = [f for f in self.models if self.model_params(f)[1]]
            if grids:
                raise ConfigError(f"value lists for {grids} need tune.enabled = true")
        return self

    def canonical(self) -> dict[str, Any]:
        doc = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}
        for fam in sorted(self.models):
            for p, v in sorted(self.models[fam].items()):
                doc[f"model.{fam}.{p}"] = list(v) if isinstance(v, tuple) else v
        return doc

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text: str, source: str = "") -> RunConfig:
    cfg = RunConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source or 'config'}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.split(".", 1)[0] not in SECTIONS or "." not in key:
            raise ConfigError(f"{source or 'config'}:{lineno}: unknown key {key!r}")
        try:
            cfg.set(key, _parse_value(value))
        except ConfigError as exc:
            raise ConfigError(f"{source or 'config'}:{lineno}: {exc}") from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def derive_seed(root: int, *keys: int) -> int:
    """Independent 32-bit child seed for a stage, from one root seed and integer keys."""
    return int(np.random.SeedSequence(root, spawn_key=tuple(keys)).generate_state(1)[0])
