"""Plain-text ``key=value`` configuration covering every pipeline threshold.

Angles are written in degrees; everything else is in SI units or counts.
``none`` disables an optional setting (the Huber kernels). Unknown keys are
rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Dict, Tuple

import numpy as np

from .association import AssociationConfig
from .errors import DatasetFormatError
from .extraction import ExtractionConfig
from .optimizer import Covariances, SolverConfig
from .pipeline import KeyframePolicy, PipelineConfig


def _deg(v: str) -> float:
    return float(np.deg2rad(float(v)))


def _opt_float(v: str):
    return None if v.lower() == "none" else float(v)


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (section attribute on PipelineConfig or "" for top level, field, parser, formatter)
_FIELDS: Dict[str, Tuple[str, str, Callable, Callable]] = {
    "mode": ("", "mode", str, str),
    "extraction.min_angle_deg": ("extraction", "min_angle", _deg, np.rad2deg),
    "extraction.coplanarity_max": ("extraction", "coplanarity_max", float, float),
    "association.max_endpoint_distance": ("association", "max_endpoint_distance", float, float),
    "association.max_normal_angle_deg": ("association", "max_normal_angle", _deg, np.rad2deg),
    "association.validity_min": ("association", "validity_min", int, int),
    "covariance.point_pixel_sigma": ("covariances", "point_pixel_sigma", float, float),
    "covariance.plane_angle_sigma_deg": ("covariances", "plane_angle_sigma", _deg, np.rad2deg),
    "covariance.plane_offset_sigma": ("covariances", "plane_offset_sigma", float, float),
    "solver.max_iterations": ("solver", "max_iterations", int, int),
    "solver.initial_lambda": ("solver", "initial_lambda", float, float),
    "solver.lambda_up": ("solver", "lambda_up", float, float),
    "solver.lambda_down": ("solver", "lambda_down", float, float),
    "solver.max_lambda_retries": ("solver", "max_lambda_retries", int, int),
    "solver.rel_cost_tol": ("solver", "rel_cost_tol", float, float),
    "solver.step_tol": ("solver", "step_tol", float, float),
    "solver.huber_delta_point": ("solver", "huber_delta_point", _opt_float, str),
    "solver.huber_delta_plane": ("solver", "huber_delta_plane", _opt_float, str),
    "solver.dense_max_params": ("solver", "dense_max_params", int, int),
    "keyframe.min_translation": ("keyframes", "min_translation", float, float),
    "keyframe.min_rotation_deg": ("keyframes", "min_rotation", _deg, np.rad2deg),
    "keyframe.max_frame_gap": ("keyframes", "max_frame_gap", int, int),
    "pipeline.ba_window": ("", "ba_window", int, int),
    "pipeline.ba_max_fixed": ("", "ba_max_fixed", int, int),
    "pipeline.min_tracked": ("", "min_tracked", int, int),
    "pipeline.min_disparity": ("", "min_disparity", float, float),
    "pipeline.max_depth_baselines": ("", "max_depth_baselines", float, float),
    "pipeline.outlier_chi2": ("", "outlier_chi2", float, float),
    "pipeline.dedup_new_planes": ("", "dedup_new_planes", _bool, int),
}

CONFIG_KEYS = tuple(_FIELDS)


def parse_config(text: str, base: PipelineConfig = None) -> PipelineConfig:
    """Apply ``key=value`` lines in ``text`` on top of ``base`` (defaults if None)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError(f"config line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise DatasetFormatError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _FIELDS[key][2](val)
        except ValueError as exc:
            raise DatasetFormatError(f"config line {lineno}: bad value for {key}: {exc}") from None

    cfg = base or PipelineConfig()
    sections = {
        "extraction": {}, "association": {}, "covariances": {}, "solver": {}, "keyframes": {}, "": {},
    }
    for key, val in values.items():
        section, attr = _FIELDS[key][:2]
        sections[section][attr] = val
    try:
        top = dict(sections.pop(""))
        for name, changes in sections.items():
            if changes:
                top[name] = replace(getattr(cfg, name), **changes)
        return replace(cfg, **top)
    except ValueError as exc:
        raise DatasetFormatError(f"invalid configuration: {exc}") from None


def load_config(path, base: PipelineConfig = None) -> PipelineConfig:
    try:
        with open(path) as f:
            return parse_config(f.read(), base)
    except FileNotFoundError:
        raise DatasetFormatError(f"missing config file: {path}") from None


def dump_config(cfg: PipelineConfig) -> str:
    """Render ``cfg`` as a config file that :func:`parse_config` reads back."""
    lines = []
    for key, (section, attr, _, out) in _FIELDS.items():
        obj = getattr(cfg, section) if section else cfg
        v = out(getattr(obj, attr))
        if isinstance(v, float):
            v = "%.17g" % v
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


__all__ = ["CONFIG_KEYS", "parse_config", "load_config", "dump_config", "AssociationConfig", "ExtractionConfig",
           "Covariances", "SolverConfig", "KeyframePolicy"]
