"""Flat key=value configuration for the registration pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ShapeMismatch


@dataclass
class PipelineConfig:
    # matching
    match_step: int = 4
    sscc_iterations: int = 5
    epsilon: float = 0.7
    feature_scale: float = 1.0  # image voxels per feature-grid voxel
    # coarse stage
    coarse_stride: int = 4
    coarse_reg_weight: float = 1.0
    coarse_step_size: float = 0.5
    coarse_iterations: int = 200
    coarse_tol: float = 1e-6
    # instance stage
    lambda_sim: float = 1.0
    lambda_reg: float = 1.0
    intensity_term: str = "none"
    lncc_window: int = 9
    parameterization: str = "displacement"
    svf_steps: int = 7
    instance_step_size: float = 1.0
    instance_iterations: int = 100
    instance_tol: float = 1e-6
    # stage gating / execution
    enable_affine: bool = True
    enable_coarse: bool = True
    enable_instance: bool = True
    threads: int = 1


def _parse_value(text: str, target_type):
    text = text.strip()
    if target_type is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ShapeMismatch(f"cannot parse boolean from {text!r}")
    return target_type(text)


def _field_types() -> dict[str, type]:
    return {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


_TYPE_MAP = {"int": int, "float": float, "str": str, "bool": bool}


def _resolve(tp):
    return _TYPE_MAP[tp] if isinstance(tp, str) else tp


def set_option(config: PipelineConfig, key: str, value: str) -> None:
    types = _field_types()
    if key not in types:
        raise ShapeMismatch(f"unknown configuration key {key!r}")
    setattr(config, key, _parse_value(value, _resolve(types[key])))


def load_config(path) -> PipelineConfig:
    """Read a flat UTF-8 ``key = value`` file; ``#`` starts a comment."""
    config = PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ShapeMismatch(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            set_option(config, key.strip(), value)
    return config


def apply_overrides(config: PipelineConfig, overrides) -> PipelineConfig:
    """Apply ``key=value`` strings (CLI ``--set``) onto a config in place."""
    for item in overrides or []:
        if "=" not in item:
            raise ShapeMismatch(f"override must be key=value, got {item!r}")
        key, _, value = item.partition("=")
        set_option(config, key.strip(), value)
    return config
