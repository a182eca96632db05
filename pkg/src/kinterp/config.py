"""Namespaced numeric settings with flag > file > default precedence."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .refine import RefineOptions
from .synthesis import W_FLOOR, ModelOptions
from .trajectory import LambdaOptions

DEFAULTS: Dict[str, Any] = {
    "trajectory.mag_floor": 0.5,
    "trajectory.cos_floor": 0.7,
    "trajectory.min_pixels": 100,
    "trajectory.agreement": 0.10,
    "refine.tau_px": 4.0,
    "refine.mag_floor": 0.5,
    "refine.max_iters": 8,
    "refine.tol": 1e-4,
    "synthesis.w_floor": W_FLOOR,
    "frames.gamma": None,
    "metrics.luma": False,
}


class ConfigError(ValueError):
    pass


def _flatten(d: Mapping, prefix: str = "") -> Dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Merge defaults, an optional JSON file and explicit overrides.

    The file may use dotted keys (``{"trajectory.mag_floor": 1}``) or nested
    objects (``{"trajectory": {"mag_floor": 1}}``). Unknown keys are errors.
    """
    cfg = dict(DEFAULTS)
    layers = []
    if path is not None:
        try:
            layers.append(_flatten(json.loads(Path(path).read_text(encoding="utf-8"))))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(layer)
    return cfg


def lambda_options(cfg: Mapping[str, Any]) -> LambdaOptions:
    return LambdaOptions(
        mag_floor=float(cfg["trajectory.mag_floor"]),
        cos_floor=float(cfg["trajectory.cos_floor"]),
        min_pixels=int(cfg["trajectory.min_pixels"]),
        agreement=float(cfg["trajectory.agreement"]),
    )


def refine_options(cfg: Mapping[str, Any]) -> RefineOptions:
    return RefineOptions(
        tau_px=float(cfg["refine.tau_px"]),
        mag_floor=float(cfg["refine.mag_floor"]),
        max_iters=int(cfg["refine.max_iters"]),
        tol=float(cfg["refine.tol"]),
    )


def model_options(cfg: Mapping[str, Any], qvi: bool = False, refine: bool = True) -> ModelOptions:
    return ModelOptions(qvi=qvi, refine=refine, lambda_opts=lambda_options(cfg),
                        refine_opts=refine_options(cfg))
