"""Experiment configuration: JSON file, schema validation, presets, overrides.

A configuration file may be partial; it is merged over a preset (``case1`` by
default).  Dotted field paths such as ``gains.kappa`` address single values for
command-line overrides and sweeps.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS3 = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 3, "maxItems": 3}
_MAT3 = {"type": "array", "items": _VEC3, "minItems": 3, "maxItems": 3}
_GAIN = {"oneOf": [_POS3, _MAT3]}
_POSNUM = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props: dict, required=None) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(props) if required is None else required,
        "additionalProperties": False,
    }


SCHEMA = _obj(
    {
        "vehicle": _obj(
            {
                "mass": _POSNUM,
                "inertia": _GAIN,
                "wrench_frame": {"enum": ["body", "inertial"]},
            }
        ),
        "truth": _obj(
            {
                "attitude_axis": _VEC3,
                "attitude_angle_deg": {"type": "number"},
                "position": _VEC3,
                "angular_velocity": _VEC3,
                "translational_velocity": _VEC3,
            }
        ),
        "estimate": _obj(
            {
                "attitude_axis": _VEC3,
                "attitude_angle_deg": {"type": "number"},
                "position": _VEC3,
                "angular_velocity": _VEC3,
                "translational_velocity": _VEC3,
            }
        ),
        "gains": _obj(
            {
                "J": _GAIN,
                "M": _GAIN,
                "D_r": _GAIN,
                "D_t": _GAIN,
                "kappa": _POSNUM,
                "varsigma": _POS3,
                "tail_weight": _POSNUM,
            }
        ),
        "sensors": _obj(
            {
                "half_angle_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 90},
                "camera_azimuth_deg": {"type": "number"},
                "cube_half_size": _POSNUM,
                "inertial_directions": {"type": "array", "items": _VEC3},
                "noise_width": _NONNEG,
                "direction_noise_width": {"oneOf": [_NONNEG, {"type": "null"}]},
                "velocity_noise_width": {"oneOf": [_NONNEG, {"type": "null"}]},
            }
        ),
        "velocity": _obj(
            {
                "source": {"enum": ["direct", "gyro", "optical"]},
                "filtered": {"type": "boolean"},
                "omega_n": _POSNUM,
                "mu": _POSNUM,
                "point_velocities": {"enum": ["finite_difference", "exact"]},
            }
        ),
        "timing": _obj({"dt": _POSNUM, "truth_horizon": _POSNUM, "estimator_horizon": _POSNUM}),
        "estimator": {"enum": ["lgvi", "continuous"]},
        "seed": {"type": "integer", "minimum": 0},
        "output": _obj({"dir": {"type": "string"}, "gnuplot": {"type": "boolean"}}),
    }
)

CASE1 = {
    "vehicle": {"mass": 0.42, "inertia": [0.0512, 0.0602, 0.0596], "wrench_frame": "body"},
    "truth": {
        "attitude_axis": [3.0, -6.0, 2.0],
        "attitude_angle_deg": 45.0,
        "position": [2.5, 0.5, -3.0],
        "angular_velocity": [0.2, -0.05, 0.1],
        "translational_velocity": [-0.05, 0.15, 0.03],
    },
    "estimate": {
        "attitude_axis": [0.0, 0.0, 1.0],
        "attitude_angle_deg": 0.0,
        "position": [0.0, 0.0, 0.0],
        "angular_velocity": [0.1, 0.45, 0.05],
        "translational_velocity": [2.05, 0.64, 1.29],
    },
    "gains": {
        "J": [0.9, 0.6, 0.3],
        "M": [0.0608, 0.0486, 0.0365],
        "D_r": [2.7, 2.2, 1.5],
        "D_t": [0.1, 0.12, 0.14],
        "kappa": 1.0,
        "varsigma": [3.0, 2.0, 1.0],
        "tail_weight": 1.0,
    },
    "sensors": {
        "half_angle_deg": 40.0,
        "camera_azimuth_deg": 0.0,
        "cube_half_size": 5.0,
        "inertial_directions": [[0.0, 0.0, -1.0], [0.1, 0.975, -0.2]],
        "noise_width": 0.001,
        "direction_noise_width": 0.001,
        "velocity_noise_width": None,
    },
    "velocity": {
        "source": "optical",
        "filtered": True,
        "omega_n": 2.0,
        "mu": 0.5,
        "point_velocities": "finite_difference",
    },
    "timing": {"dt": 0.02, "truth_horizon": 150.0, "estimator_horizon": 20.0},
    "estimator": "lgvi",
    "seed": 0,
    "output": {"dir": "out", "gnuplot": False},
}

CASE2 = copy.deepcopy(CASE1)
CASE2["sensors"]["half_angle_deg"] = 25.0

PRESETS = {"case1": CASE1, "case2": CASE2}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(cfg: dict) -> dict:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    t = cfg["timing"]
    for k in ("truth_horizon", "estimator_horizon"):
        n = t[k] / t["dt"]
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"timing.{k}: must be a multiple of timing.dt")
    if t["estimator_horizon"] > t["truth_horizon"] + 1e-12:
        raise ConfigError("timing.estimator_horizon: exceeds timing.truth_horizon")
    s = cfg["gains"]["varsigma"]
    if not s[0] > s[1] > s[2]:
        raise ConfigError("gains.varsigma: must be strictly decreasing")
    for block in ("truth", "estimate"):
        if not any(cfg[block]["attitude_axis"]):
            raise ConfigError(f"{block}.attitude_axis: must be non-zero")
    return cfg


def preset(name: str = "case1") -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"preset: unknown preset {name!r} (choose from {sorted(PRESETS)})") from None


def load_config(path=None, preset_name: str = "case1") -> dict:
    cfg = preset(preset_name)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>: configuration must be a JSON object")
        cfg = deep_merge(cfg, user)
    return validate(cfg)


def set_field(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of ``cfg`` with ``dotted`` (e.g. ``gains.kappa``) replaced."""
    out = copy.deepcopy(cfg)
    keys = dotted.split(".")
    node = out
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"{dotted}: no such field")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"{dotted}: no such field")
    node[keys[-1]] = value
    return out


def parse_value(text: str):
    """Interpret a command-line value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2)
