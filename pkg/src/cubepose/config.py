"""Scenario configuration, presets and the JSON run-config file format.

The config file is a single JSON object mirroring :class:`ScenarioConfig`.
Every key is optional except ``name`` and ``mode``; missing keys take the
dataclass defaults and unknown keys are rejected.
"""
import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .control import LqrWeights, ThrusterConfig, default_thrusters
from .errors import ConfigurationError
from .eskf import GateConfig, NoiseConfig
from .rigid_body import DEFAULT_INERTIA, MassProperties
from .sensors import AccelModel, Anchor, GyroModel, UwbModel, boom_anchors, planar_anchors

MODES = ("closed_loop", "turntable_open_loop", "translation_only")
TAG_OFFSET = 0.0707     # m, diagonal of a 5 cm square


@dataclass(frozen=True)
class InitialState:
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)     # chief frame
    attitude: tuple = (0.0, 0.0, 0.0, 1.0)
    rates: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FilterConfig:
    noise: NoiseConfig = NoiseConfig()
    gate: GateConfig = GateConfig()
    # initial 1-sigma per error channel: position (m), body velocity (m/s), attitude (rad)
    init_sigma: tuple = (0.05,) * 3 + (0.01,) * 3 + (math.radians(5.0),) * 3
    sample_initial_error: bool = True
    lever_arm_aware: bool = True
    attitude_update: bool = False

    @property
    def cov0(self):
        return np.diag(np.square(self.init_sigma))


@dataclass(frozen=True)
class ThrusterSpec:
    positions: tuple
    directions: tuple
    f_max: float = 0.1

    def build(self):
        return ThrusterConfig(np.array(self.positions), np.array(self.directions), self.f_max)


@dataclass(frozen=True)
class ControlConfig:
    weights: LqrWeights = LqrWeights()
    f_limit: float = 0.1          # N, per chief-frame axis
    tau_limit: float = 0.004      # N m, per body axis
    thrusters: Optional[ThrusterSpec] = None
    torque_priority: float = 10.0
    guidance: str = "fixed"       # "fixed" or "los"
    target_position: tuple = (0.0, 0.0, 0.0)
    target_attitude: tuple = (0.0, 0.0, 0.0, 1.0)
    k_v: float = 0.1              # 1/s
    v_max: float = 0.03           # m/s
    capture_radius: float = 0.1   # m

    def build_thrusters(self):
        return default_thrusters() if self.thrusters is None else self.thrusters.build()


@dataclass(frozen=True)
class TurntableConfig:
    rate: float = 0.5             # rad/s about body z
    reverse_at: float = 0.5       # fraction of the run after which the spin reverses


@dataclass(frozen=True)
class TranslationConfig:
    accel: float = 0.004          # m/s^2
    segment: float = 5.0          # s per constant-acceleration segment


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    mode: str
    duration: float = 30.0
    dt: float = 0.01
    range_every: int = 10         # IMU steps per UWB epoch
    seed: int = 0
    anchors: tuple = field(default_factory=boom_anchors)
    tag_arm: tuple = (0.0, 0.0, 0.0)
    imu_arm: tuple = (0.0, 0.0, 0.0)
    mass: float = 1.0
    inertia: tuple = DEFAULT_INERTIA
    gyro: GyroModel = GyroModel()
    accel: AccelModel = AccelModel()
    uwb: UwbModel = UwbModel()
    initial: InitialState = InitialState()
    filter: FilterConfig = FilterConfig()
    control: ControlConfig = ControlConfig()
    turntable: TurntableConfig = TurntableConfig()
    translation: TranslationConfig = TranslationConfig()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.duration > 0 or not self.dt > 0:
            raise ConfigurationError("duration and dt must be positive")
        if self.range_every < 1:
            raise ConfigurationError("range_every must be >= 1")
        if len(self.anchors) == 0:
            raise ConfigurationError("at least one anchor is required")
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("anchor ids must be unique")
        if self.control.guidance not in ("fixed", "los"):
            raise ConfigurationError("guidance must be 'fixed' or 'los'")
        for name in ("tag_arm", "imu_arm"):
            if np.linalg.norm(getattr(self, name)) >= 1.0:
                raise ConfigurationError(f"{name} must be shorter than 1 m")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    @property
    def mass_properties(self):
        return MassProperties(self.mass, np.diag(self.inertia))

    def anchor_map(self):
        return {a.id: a for a in self.anchors}


def preset_translation():
    """Open-loop constant acceleration alternating along X and Y."""
    return ScenarioConfig(name="translation", mode="translation_only", duration=40.0,
                          gyro=GyroModel(bias=(0.0, 0.0, 0.0)))


def preset_pose_acquisition():
    """Closed-loop acquisition of a target pose 0.5 m away with LOS heading."""
    return ScenarioConfig(
        name="pose_acquisition", mode="closed_loop", duration=30.0,
        control=ControlConfig(guidance="los", target_position=(0.3, -0.4, 0.0)),
    )


def preset_turntable():
    """Pure rotation on a turntable with the UWB tag 7.07 cm off the spin axis."""
    return ScenarioConfig(
        name="turntable", mode="turntable_open_loop", duration=60.0,
        anchors=planar_anchors(), tag_arm=(TAG_OFFSET, 0.0, 0.0),
        gyro=GyroModel(bias=(0.0, 0.0, 0.0)),
        filter=FilterConfig(init_sigma=(0.02,) * 3 + (0.005,) * 3 + (math.radians(1.0),) * 3),
    )


PRESETS = {
    "translation": preset_translation,
    "pose_acquisition": preset_pose_acquisition,
    "turntable": preset_turntable,
}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- serialization -----------------------------------------------------------

def to_dict(cfg):
    return dataclasses.asdict(cfg)


def _convert(hint, value, path):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return None if value is None else _convert(args[0], value, path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{path}: expected an object")
        return from_dict(hint, value, path)
    if hint is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path}: expected a list")
        return tuple(_convert_item(v, f"{path}[{i}]") for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string")
        return value
    raise ConfigurationError(f"{path}: unsupported field type {hint!r}")


def _convert_item(v, path):
    if isinstance(v, dict):
        return from_dict(Anchor, v, path)
    if isinstance(v, (list, tuple)):
        return tuple(_convert_item(x, f"{path}[{i}]") for i, x in enumerate(v))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"{path}: expected a number")
    return float(v)


def from_dict(cls, data, path="config"):
    """Build dataclass ``cls`` from plain data, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _convert(hints[f.name], data[f.name], f"{path}.{f.name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigurationError(f"{path}: missing required key {f.name!r}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def dumps(cfg):
    return json.dumps(to_dict(cfg), indent=2) + "\n"


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    return from_dict(ScenarioConfig, data)


def load(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return loads(path.read_text())
