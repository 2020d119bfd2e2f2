"""Run configuration: one flat key = value file drives a whole experiment.

Every tunable of the mapper, gain, planner, motion model, and metrics
lives here with its default.  Unknown keys are hard errors so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Invalid run configuration."""


class ParseError(ConfigError):
    """Malformed config text; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


PLANNERS = ("semantic_nbv", "rh_nbv_baseline")


@dataclass
class RunConfig:
    """Resolved parameters of one run."""

    scene_path: str = ""
    planner: str = "semantic_nbv"

    # gain weights
    lambda1: float = 0.5
    lambda2: float = 0.5
    eta_tgt: float = 2.0
    n_exp: float = 10.0
    lambda_o: float = 1.0
    lambda_l: float = 1.0
    conf_min: float = 0.5
    lambda_exp: float = 0.5

    # tree growth
    max_nodes: int = 24
    extension_radius: float = 1.0
    rewire_radius: float = 1.5
    yaw_samples: int = 6
    robot_radius: float = 0.2
    parallel_workers: int = 0

    # mode machine
    c_thre: int = 3
    dominance_ratio: float = 10.0

    # evaluation
    roi_dilation: float = 1.0
    sample_period: float = 2.0

    # motion limits
    max_velocity: float = 0.8
    max_acceleration: float = 0.8
    max_yaw_rate: float = math.pi / 4.0

    # simulation
    sim_timestep: float = 0.05
    max_sim_time: float = 600.0
    start_pose: tuple = (0.5, 0.5, 1.0, 0.0)
    rng_seed: int = 0
    voxel_size: float = 0.1
    label_dropout: float = 0.0

    # sensor
    camera_width: int = 64
    camera_height: int = 48
    camera_hfov_deg: float = 90.0
    camera_vfov_deg: float = 60.0
    camera_max_range: float = 5.0

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {PLANNERS}: {self.planner!r}")
        self.start_pose = tuple(float(v) for v in self.start_pose)
        if len(self.start_pose) != 4:
            raise ConfigError(f"start_pose needs x y z yaw: {self.start_pose}")
        positive = (
            "eta_tgt", "n_exp", "lambda_o", "lambda_l", "max_nodes", "extension_radius",
            "rewire_radius", "yaw_samples", "robot_radius", "c_thre", "dominance_ratio",
            "sample_period", "max_velocity", "max_acceleration", "max_yaw_rate",
            "sim_timestep", "voxel_size", "camera_width", "camera_height",
            "camera_hfov_deg", "camera_vfov_deg", "camera_max_range",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive: {getattr(self, name)}")
        nonneg = ("lambda1", "lambda2", "lambda_exp", "roi_dilation", "max_sim_time",
                  "label_dropout", "parallel_workers")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative: {getattr(self, name)}")
        if not 0.0 <= self.conf_min <= 1.0:
            raise ConfigError(f"conf_min out of [0, 1]: {self.conf_min}")
        if not 0.0 <= self.label_dropout <= 1.0:
            raise ConfigError(f"label_dropout out of [0, 1]: {self.label_dropout}")
        if self.rewire_radius < self.extension_radius:
            raise ConfigError("rewire_radius must be >= extension_radius")


def _parse_start_pose(value: str) -> tuple:
    parts = value.split()
    if len(parts) != 4:
        raise ValueError(f"start_pose needs 4 numbers (x y z yaw), got {len(parts)}")
    return tuple(float(p) for p in parts)


def _parse_planner(value: str) -> str:
    if value not in PLANNERS:
        raise ValueError(f"planner must be one of {PLANNERS}: {value!r}")
    return value


_SPECIAL = {
    "start_pose": _parse_start_pose,
    "planner": _parse_planner,
    "scene_path": str,
}


def _field_parsers() -> dict:
    parsers = {}
    for f in fields(RunConfig):
        if f.name in _SPECIAL:
            parsers[f.name] = _SPECIAL[f.name]
        elif f.type in ("int", int):
            parsers[f.name] = lambda v: int(v, 0)
        else:
            parsers[f.name] = float
    return parsers


_PARSERS = _field_parsers()


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines into a RunConfig.

    Blank lines and lines starting with # are ignored.  An empty file
    yields all defaults.  Unknown keys, malformed lines, and bad values
    raise ParseError with the line number.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        if key not in _PARSERS:
            raise ParseError(lineno, f"unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ParseError(lineno, f"bad value for {key!r}: {exc}") from exc
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_lines(config: RunConfig) -> list:
    """Render every resolved parameter back to parseable key = value lines."""
    out = []
    for f in fields(RunConfig):
        v = getattr(config, f.name)
        if f.name == "start_pose":
            rendered = " ".join(repr(float(x)) for x in v)
        elif isinstance(v, float):
            rendered = repr(v)
        else:
            rendered = str(v)
        out.append(f"{f.name} = {rendered}")
    return out
