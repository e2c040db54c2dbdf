"""Pipeline configuration: defaults, JSON file, and ``--set key=value`` overrides.

Precedence is overrides > file > defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigurationError


@dataclass
class SceneConfig:
    elevation: str | None = None      # PFM; None selects the bundled sample scene
    semantics: str | None = None      # palette PNG
    satellite: str | None = None      # RGB PNG
    classes: str | None = None        # class registry JSON
    cell_size: float = 0.25
    origin: list | None = None        # world (x, y) of cell (0, 0); None centers the footprint


@dataclass
class TrajectoryConfig:
    center: list = field(default_factory=lambda: [0.0, 0.0])
    heading: float = 0.0
    range_m: float = 7.0
    step_m: float = 0.5
    frames: int = 15
    uturn: bool = False
    uturn_frames: int = 60


@dataclass
class RenderConfig:
    height: int = 256
    width: int = 512
    epsilon: float = 0.005
    sky_radius: float = 200.0
    camera_height: float = 3.0
    upsample: bool = False


@dataclass
class VoxelConfig:
    vertical: float = 0.25
    horizontal: float | None = None
    max_height: float | None = None
    feature: float = 0.03125


@dataclass
class KnnConfig:
    k: int = 32


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        cfg = cls()
        _merge(cfg, doc, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigurationError(f"{path}: top level must be an object")
            _resolve_scene_paths(doc, Path(path).parent)
        cfg = cls()
        _merge(cfg, doc, "")
        for item in overrides:
            apply_override(cfg, item)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        t = self.trajectory
        if t.step_m <= 0 or t.range_m <= 0:
            raise ConfigurationError("trajectory.range_m and trajectory.step_m must be positive")
        derived = 2 * (t.range_m / 2) / t.step_m + 1
        if not math.isclose(derived, round(derived), abs_tol=1e-9) or int(round(derived)) != t.frames:
            raise ConfigurationError(
                f"trajectory.frames={t.frames} disagrees with range_m={t.range_m} / step_m={t.step_m} "
                f"(expected {derived:g})"
            )
        if t.uturn_frames < 2 or t.uturn_frames % 2:
            raise ConfigurationError("trajectory.uturn_frames must be an even count >= 2")
        r = self.render
        if r.height < 2 or r.width < 2 or r.width % 2:
            raise ConfigurationError("render.height must be >= 2 and render.width an even count >= 2")
        if not r.epsilon > 0 or not r.sky_radius > 0 or not r.camera_height > 0:
            raise ConfigurationError("render.epsilon, sky_radius and camera_height must be positive")
        if self.knn.k < 1:
            raise ConfigurationError("knn.k must be >= 1")
        if self.voxel.vertical <= 0 or self.voxel.feature <= 0:
            raise ConfigurationError("voxel sizes must be positive")


_SCENE_PATHS = ("elevation", "semantics", "satellite", "classes")


def _resolve_scene_paths(doc: dict, base: Path) -> None:
    """Make relative scene file paths in a config file relative to that file."""
    scene = doc.get("scene")
    if not isinstance(scene, dict):
        return
    for key in _SCENE_PATHS:
        value = scene.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            scene[key] = str((base / value).resolve())


def _merge(obj, doc: dict, prefix: str) -> None:
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in doc.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {prefix}{key} must be an object")
            _merge(current, value, f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(current, value, f"{prefix}{key}"))


def _coerce(current, value, key):
    if value is None or current is None:
        return value
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(current, list):
            return list(value)
        return type(current)(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config key {key}: cannot use {value!r}") from None


def apply_override(cfg: PipelineConfig, item: str) -> None:
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    doc = value
    for part in reversed(key.strip().split(".")):
        doc = {part: doc}
    _merge(cfg, doc, "")
