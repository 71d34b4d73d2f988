"""Experiment configuration: JSON schema, defaults and object builders.

Physical inputs use mm, degrees and microseconds; times are converted to
lengths with ``geometry.sound_speed_mm_per_us`` on ingestion.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .bandlimit import FilterSpec
from .geometry import ImageGrid, SensorGeometry, TimeGrid
from .phantom import GridPhantomSpec

DEFAULT_CONFIG_PATH = Path(__file__).with_name("default_config.json")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_opt_pos = {"anyOf": [_pos, {"type": "null"}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj(
    {
        "geometry": _obj(
            {
                "radius_mm": _pos,
                "num_sensors": _posint,
                "coverage_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 360},
                "start_angle_deg": _num,
                "sound_speed_mm_per_us": _pos,
                "step_convention": {"enum": ["per_sensor", "endpoints"]},
            }
        ),
        "grid": _obj(
            {
                "samples_per_axis": _posint,
                "side_mm": _pos,
                "center_mm": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "support_radius_mm": _opt_pos,
            }
        ),
        "time": _obj({"step_mm": _opt_pos, "duration_us": _pos, "start_us": _nonneg}),
        "filter": _obj(
            {
                "kind": {"enum": ["gaussian", "ideal", "none"]},
                "omega_rad_per_mm": _opt_pos,
                "attenuation_at_omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            }
        ),
        "phantom": _obj(
            {
                "type": {"enum": ["grid", "random"]},
                "pitch_mm": _pos,
                "bar_width_mm": _pos,
                "extent_mm": _pos,
                "amplitude": _num,
                "orientation_deg": _num,
                "omega_rad_per_mm": _opt_pos,
                "support_radius_mm": _opt_pos,
            }
        ),
        "simulation": _obj({"subsample": _posint, "noise_level": _nonneg}),
        "operator": _obj({"dense_limit_mb": _nonneg, "time_refine": {"anyOf": [_posint, {"type": "null"}]}}),
        "methods": _obj(
            {
                "tikhonov": _obj({"lambda_relative": _nonneg, "max_iters": _posint, "tol": _pos}),
                "l1pos": _obj(
                    {
                        "mu_relative": _nonneg,
                        "max_iters": _posint,
                        "tol": _pos,
                        "restart": {"type": "boolean"},
                        "step_size": _opt_pos,
                        "norm_iters": {"type": "integer", "minimum": 10},
                    }
                ),
            }
        ),
        "metrics": _obj({"threshold": {"type": "number", "minimum": 0, "maximum": 1}}),
        "sampling": _obj(
            {
                "sweep_factors": {"type": "array", "items": _pos, "minItems": 1},
                "num_probes": {"type": "integer", "minimum": 10},
                "instance": _obj(
                    {
                        "samples_per_axis": _posint,
                        "spacing_mm": _pos,
                        "R0_mm": _pos,
                        "radius_mm": _pos,
                        "omega_rad_per_mm": _pos,
                        "filter_kind": {"enum": ["gaussian", "ideal", "none"]},
                        "lambda_relative": _nonneg,
                    }
                ),
            }
        ),
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    }
)


def load_defaults() -> dict:
    with open(DEFAULT_CONFIG_PATH) as fh:
        return json.load(fh)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _key_path(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ".".join(filter(None, [path, extra[0] if extra else ""]))
    return path


def validate(raw: dict) -> None:
    """Schema check of a user file before defaults are merged."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_key_path(e), e.message)


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    # -- builders ---------------------------------------------------------
    @property
    def sound_speed(self) -> float:
        return float(self.raw["geometry"]["sound_speed_mm_per_us"])

    def geometry(self) -> SensorGeometry:
        g = self.raw["geometry"]
        return SensorGeometry(
            radius=float(g["radius_mm"]),
            num_sensors=int(g["num_sensors"]),
            coverage=math.radians(g["coverage_deg"]),
            start_angle=math.radians(g["start_angle_deg"]),
            sound_speed=self.sound_speed,
            step_convention=g["step_convention"],
        )

    def image_grid(self) -> ImageGrid:
        g = self.raw["grid"]
        return ImageGrid(
            spacing=float(g["side_mm"]) / int(g["samples_per_axis"]),
            samples_per_axis=int(g["samples_per_axis"]),
            center=tuple(g["center_mm"]),
            support_radius=g["support_radius_mm"],
        )

    def time_grid(self) -> TimeGrid:
        t = self.raw["time"]
        step = t["step_mm"] if t["step_mm"] is not None else self.image_grid().spacing
        c = self.sound_speed
        start = c * float(t["start_us"])
        length = c * float(t["duration_us"])
        n = int(math.floor(length / step + 1e-9)) + 1
        return TimeGrid(float(step), n, start)

    def filter_spec(self) -> FilterSpec | None:
        f = self.raw["filter"]
        if f["kind"] == "none":
            return None
        omega = f["omega_rad_per_mm"]
        if omega is None:
            omega = math.pi / self.image_grid().spacing
        return FilterSpec(float(omega), f["kind"], float(f["attenuation_at_omega"]))

    def grid_phantom_spec(self) -> GridPhantomSpec | None:
        p = self.raw["phantom"]
        if p["type"] != "grid":
            return None
        return GridPhantomSpec(
            pitch=float(p["pitch_mm"]),
            bar_width=float(p["bar_width_mm"]),
            extent=float(p["extent_mm"]),
            amplitude=float(p["amplitude"]),
            orientation=math.radians(p["orientation_deg"]),
        )

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def section(self, *keys):
        node = self.raw
        for k in keys:
            node = node[k]
        return node

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for key, value in dotted.items():
            node = raw
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        return ExperimentConfig(raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def check_consistency(cfg: ExperimentConfig) -> None:
    """Cross-field checks, run before any computation."""
    try:
        geom = cfg.geometry()
    except ValueError as exc:
        raise ConfigError("geometry", str(exc)) from None
    try:
        grid = cfg.image_grid()
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    try:
        tgrid = cfg.time_grid()
    except ValueError as exc:
        raise ConfigError("time", str(exc)) from None
    try:
        cfg.filter_spec()
    except ValueError as exc:
        raise ConfigError("filter", str(exc)) from None
    p = cfg.raw["phantom"]
    if p["type"] == "grid":
        side = float(cfg.raw["grid"]["side_mm"])
        if p["extent_mm"] > side * (1 + 1e-9):
            raise ConfigError(
                "phantom.extent_mm", f"extent {p['extent_mm']} exceeds the grid side {side}"
            )
        if p["bar_width_mm"] > p["pitch_mm"]:
            raise ConfigError("phantom.bar_width_mm", "bar width exceeds pitch")
        if p["pitch_mm"] > p["extent_mm"]:
            raise ConfigError("phantom.pitch_mm", "pitch exceeds extent")
    off = math.hypot(*grid.center)
    if off + grid.R0 + grid.spacing >= geom.radius:
        raise ConfigError("geometry.radius_mm", "sensor circle must enclose the image support")
    from .geometry import signal_window

    lo, hi = signal_window(geom, grid)
    if not tgrid.covers(lo, hi):
        raise ConfigError(
            "time.duration_us",
            f"time window [{tgrid.start_time:.4g}, {tgrid.end_time:.4g}] mm does not cover "
            f"the signal window [{lo:.4g}, {hi:.4g}] mm",
        )


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read, validate and merge a JSON config with the shipped defaults."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("", "top level must be a JSON object")
        validate(raw)
    merged = _merge(load_defaults(), raw)
    if overrides:
        merged = _merge(merged, overrides)
    validate(merged)
    cfg = ExperimentConfig(merged)
    check_consistency(cfg)
    return cfg
