"""Experiment configuration documents (JSON) and the shipped presets."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

from .dynamics import SimConfig
from .errors import ConfigError

SECTIONS = ("map", "perturbation", "noise", "sim", "experiment")
SIM_FIELDS = {"x0", "horizon", "record_stride", "tol_K", "tol_0", "window", "start", "eps0", "n1", "precision"}
INT_FIELDS = {"horizon", "record_stride", "window", "start", "n1", "precision"}


def preset_names() -> list[str]:
    files = resources.files("perturbmap").joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def _parse(text: str, origin: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}:{exc.lineno}:{exc.colno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise ConfigError(origin, "top level must be an object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown section; expected one of {', '.join(SECTIONS)}")
    return doc


def load_preset(name: str) -> dict:
    if name not in preset_names():
        raise ConfigError("preset", f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    text = resources.files("perturbmap").joinpath("presets", f"{name}.json").read_text()
    return _parse(text, f"preset {name}")


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    return _parse(text, str(path))


def canonical_text(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def sim_from_config(cfg: dict | None) -> tuple[SimConfig, int | None]:
    """SimConfig plus the optional decimal precision."""
    if cfg is None:
        raise ConfigError("sim", "missing")
    if not isinstance(cfg, dict):
        raise ConfigError("sim", "expected an object")
    unknown = set(cfg) - SIM_FIELDS
    if unknown:
        raise ConfigError(f"sim.{sorted(unknown)[0]}", "unknown field")
    if "x0" not in cfg:
        raise ConfigError("sim.x0", "missing")
    kw: dict[str, Any] = {}
    for k, v in cfg.items():
        if v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"sim.{k}", f"not a number: {v!r}")
        if k in INT_FIELDS:
            if int(v) != v:
                raise ConfigError(f"sim.{k}", "must be an integer")
            v = int(v)
        kw[k] = v
    precision = kw.pop("precision", None)
    return SimConfig(**kw), precision


def experiment_value(cfg: dict, key: str, default=None, kind=None):
    exp = cfg.get("experiment") or {}
    if key not in exp:
        if default is None:
            raise ConfigError(f"experiment.{key}", "missing")
        return default
    v = exp[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ConfigError(f"experiment.{key}", "must be an integer")
        return int(v)
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"experiment.{key}", "must be a number")
        return float(v)
    return v
