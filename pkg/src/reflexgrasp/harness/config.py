"""Scenario configuration: versioned JSON documents mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..gripper import NoiseParams
from ..reflex import ReflexParams
from ..teleop import CouplingGains, OperatorScript

SCHEMA_VERSION = 1
TASKS = ("hold", "regrasp", "pick_place")


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the file and field."""


@dataclass(frozen=True)
class ObjectConfig:
    shape: str = "sphere"
    radius: float = 0.03
    half_height: float = 0.1
    position: tuple = (0.55, 0.0, -0.17)
    mass: float = 0.3
    mass_schedule: Optional[dict] = None  # {"m0", "m1", "duration", "start"}
    mu_true: float = 0.5
    anchored: bool = False


@dataclass(frozen=True)
class DynamicsConfig:
    arm_inertia: float = 0.05
    arm_damping: float = 0.1
    gripper_inertia: float = 0.005
    gripper_damping: float = 0.02


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    duration: float = 10.0
    control_rate: float = 500.0
    reflexes_enabled: bool = True
    table_height: Optional[float] = -0.2
    home: tuple = (0.9, 0.0, -1.8, 0.0, 0.9, 0.0)
    latency_ticks: int = 0
    object: ObjectConfig = field(default_factory=ObjectConfig)
    operator: OperatorScript = field(default_factory=OperatorScript)
    reflex: ReflexParams = field(default_factory=ReflexParams)
    gains: CouplingGains = field(default_factory=CouplingGains)
    noise: NoiseParams = field(default_factory=NoiseParams)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    record_trace: bool = True

    def with_overrides(self, seed: Optional[int] = None, reflexes: Optional[bool] = None) -> ScenarioConfig:
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if reflexes is not None:
            cfg = dataclasses.replace(cfg, reflexes_enabled=bool(reflexes))
        return cfg

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def sha256(self) -> str:
        """Hash of the canonical JSON form; identifies the run together with the seed."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_NESTED = {
    "object": ObjectConfig,
    "operator": OperatorScript,
    "reflex": ReflexParams,
    "gains": CouplingGains,
    "noise": NoiseParams,
    "dynamics": DynamicsConfig,
}


_NULLABLE = {"table_height", "mass_schedule", "release_time"}


def _to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _check_value(path: str, default: Any, value: Any) -> Any:
    if value is None:
        if path.rsplit(".", 1)[-1] in _NULLABLE:
            return None
        raise ConfigError(f"field '{path}': null is not allowed")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"field '{path}': expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{path}': expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{path}': expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or len(value) != len(default):
            raise ConfigError(f"field '{path}': expected a list of {len(default)} numbers")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"field '{path}': list entries must be numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"field '{path}': expected a string, got {value!r}")
        return value
    return value  # Optional fields: validated by the dataclass


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"field '{prefix or '<root>'}': expected an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"field '{prefix}{unknown[0]}': unknown key")
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key in _NESTED and cls is ScenarioConfig:
            kwargs[key] = _build(_NESTED[key], value, path + ".")
        else:
            kwargs[key] = _check_value(path, getattr(defaults, key), value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{prefix.rstrip('.') or '<root>'}': {exc}") from None


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}: field 'schema_version': expected {SCHEMA_VERSION}, got {version!r}")
    try:
        cfg = _build(ScenarioConfig, data, "")
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if cfg.object.shape not in ("sphere", "cylinder"):
        raise ConfigError(f"{source}: field 'object.shape': must be 'sphere' or 'cylinder'")
    if cfg.duration <= 0 or cfg.control_rate <= 0:
        raise ConfigError(f"{source}: field 'duration': duration and control_rate must be positive")
    if cfg.latency_ticks < 0:
        raise ConfigError(f"{source}: field 'latency_ticks': must be non-negative")
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))
