"""Domain types, coordinate conventions and the semantic class registry.

World frame: x east, y north, z up, meters. Height-field row 0 is the
northernmost row. Panorama pixel (p, q) has its center at the half-integer
offset (p + 0.5, q + 0.5); column q looks at azimuth

    psi(q) = 2*pi*(q + 0.5)/W - pi

measured clockwise from the camera heading, row p at elevation

    theta(p) = pi/2 - pi*(p + 0.5)/H.

Headings are compass bearings: 0 faces +y (north), pi/2 faces +x (east).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, GeometryError

CONVENTIONS_VERSION = 1
DEFAULT_CAMERA_HEIGHT = 3.0
SKY = "sky"
RESERVED_NAMES = ("road", "building_left", "building_right", SKY)

# Heading snapping tolerance, in columns. Headings within this of an integer
# column shift produce rays that are exact column rotations of heading 0.
_SNAP_TOL = 1e-9
_POLE_EPS = 1e-15


@dataclass(frozen=True)
class WorldConventions:
    version: int
    x_axis: str
    y_axis: str
    z_axis: str
    heightfield_row0: str
    camera_center: str
    azimuth: str
    elevation: str
    heading: str


def world_conventions() -> WorldConventions:
    """Return the fixed coordinate convention record (see ``docs/conventions.md``)."""
    return WorldConventions(
        version=CONVENTIONS_VERSION,
        x_axis="east",
        y_axis="north",
        z_axis="up",
        heightfield_row0="northernmost",
        camera_center="(L_t.x, L_t.y, camera_height)",
        azimuth="psi(q) = 2*pi*(q+0.5)/W - pi, clockwise from heading",
        elevation="theta(p) = pi/2 - pi*(p+0.5)/H",
        heading="compass bearing in radians, 0 = +y (north), pi/2 = +x (east)",
    )


# --------------------------------------------------------------------------
# Equirectangular mapping
# --------------------------------------------------------------------------

def pixel_azimuth(q, width):
    return 2.0 * np.pi * (np.asarray(q, dtype=np.float64) + 0.5) / width - np.pi


def pixel_elevation(p, height):
    return np.pi / 2.0 - np.pi * (np.asarray(p, dtype=np.float64) + 0.5) / height


def heading_column_shift(heading: float, width: int) -> int | None:
    """Integer column rotation equivalent to ``heading``, or None if off-grid."""
    k = float(heading) * width / (2.0 * math.pi)
    kr = round(k)
    if abs(k - kr) <= _SNAP_TOL:
        return int(kr) % width
    return None


def column_bearings(q, width: int, heading: float):
    """World bearing (clockwise from north) of column coordinate(s) ``q``.

    For headings that are an integer number of columns the bearing is taken
    from the heading-0 column table, which makes renders at such headings
    exact circular shifts of each other.
    """
    q = np.asarray(q, dtype=np.float64)
    shift = heading_column_shift(heading, width)
    if shift is not None:
        return pixel_azimuth(np.mod(q + shift, width), width)
    return heading + pixel_azimuth(q, width)


def directions_from_angles(bearing, elevation):
    bearing = np.asarray(bearing, dtype=np.float64)
    elevation = np.asarray(elevation, dtype=np.float64)
    cos_el = np.cos(elevation)
    cos_el = np.where(np.abs(cos_el) < _POLE_EPS, 0.0, cos_el)
    return np.stack(
        np.broadcast_arrays(cos_el * np.sin(bearing), cos_el * np.cos(bearing), np.sin(elevation)),
        axis=-1,
    )


def ray_direction(p, q, heading: float, height: int, width: int):
    """Unit world direction for (possibly fractional) pixel coordinates."""
    return directions_from_angles(
        column_bearings(q, width, heading), pixel_elevation(p, height)
    )


def pixel_directions(height: int, width: int, heading: float) -> np.ndarray:
    """(H, W, 3) unit ray directions through every pixel center."""
    bearings = column_bearings(np.arange(width), width, heading)
    elevations = pixel_elevation(np.arange(height), height)
    return directions_from_angles(bearings[None, :], elevations[:, None])


def direction_to_pixel(directions, height: int, width: int, heading: float):
    """Nearest pixel (p, q) for world direction vectors of shape (..., 3).

    Rows are clamped at the poles; columns wrap.
    """
    d = np.asarray(directions, dtype=np.float64)
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    bearing = np.arctan2(dx, dy)
    elevation = np.arctan2(dz, np.hypot(dx, dy))
    shift = heading_column_shift(heading, width)
    if shift is not None:
        u = (bearing + np.pi) * (width / (2.0 * np.pi))
        q = np.mod(np.floor(u).astype(np.int64) - shift, width)
    else:
        psi = np.mod(bearing - heading + np.pi, 2.0 * np.pi)
        q = np.mod(np.floor(psi * (width / (2.0 * np.pi))).astype(np.int64), width)
    v = (np.pi / 2.0 - elevation) * (height / np.pi)
    p = np.clip(np.floor(v).astype(np.int64), 0, height - 1)
    return p, q


# --------------------------------------------------------------------------
# Class registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SemanticClass:
    id: int
    name: str
    rgb: tuple[int, int, int]


# Channels stay <= 212 so a 1.2x brightness factor never clips.
_DEFAULT_CLASSES = (
    ("road", (128, 64, 128)),
    ("sidewalk", (200, 35, 200)),
    ("building_left", (140, 70, 70)),
    ("building_right", (70, 70, 140)),
    ("vegetation", (107, 142, 35)),
    ("terrain", (152, 200, 152)),
    ("object", (200, 170, 30)),
    ("sky", (70, 130, 180)),
)


@dataclass(frozen=True)
class ClassRegistry:
    classes: tuple[SemanticClass, ...]

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ConfigurationError(f"class ids must be dense, unique and start at 0, got {ids}")
        names = [c.name for c in self.classes]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigurationError(f"duplicate class names: {dupes}")
        if SKY not in names:
            raise ConfigurationError("class registry must contain 'sky'")
        for c in self.classes:
            if len(c.rgb) != 3 or any(not 0 <= v <= 255 for v in c.rgb):
                raise ConfigurationError(f"class {c.name!r}: rgb must be three values in [0, 255]")

    @classmethod
    def from_entries(cls, entries: Iterable[dict]) -> "ClassRegistry":
        try:
            classes = tuple(
                SemanticClass(int(e["id"]), str(e["name"]), tuple(int(v) for v in e["rgb"]))
                for e in entries
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed class entry: {exc}") from exc
        return cls(tuple(sorted(classes, key=lambda c: c.id)))

    @classmethod
    def from_json(cls, text: str) -> "ClassRegistry":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"class registry is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "classes" not in doc:
            raise ConfigurationError("class registry JSON needs a top-level 'classes' list")
        return cls.from_entries(doc["classes"])

    @classmethod
    def load(cls, path) -> "ClassRegistry":
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(
            {"classes": [{"id": c.id, "name": c.name, "rgb": list(c.rgb)} for c in self.classes]},
            indent=2,
        )

    def __len__(self):
        return len(self.classes)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.id
        raise KeyError(name)

    @property
    def sky_id(self) -> int:
        return self.id_of(SKY)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def palette(self) -> np.ndarray:
        """(n_classes, 3) uint8 display colors indexed by class id."""
        return np.array([c.rgb for c in self.classes], dtype=np.uint8)

    def check_ids(self, ids) -> None:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            bad = np.unique(ids[(ids < 0) | (ids >= len(self))])
            raise ConfigurationError(f"unregistered class ids: {bad.tolist()}")


def class_registry_default() -> ClassRegistry:
    """The built-in 8-class registry (left and right buildings are distinct)."""
    return ClassRegistry(
        tuple(SemanticClass(i, name, rgb) for i, (name, rgb) in enumerate(_DEFAULT_CLASSES))
    )


# --------------------------------------------------------------------------
# Height field and trajectory
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SemanticHeightField:
    """Per-cell elevation (m) and class id over a local metric plane.

    ``origin`` is the world (x, y) of the center of cell (row 0, col 0);
    rows run south, columns run east.
    """

    elevation: np.ndarray
    semantics: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        elev = np.asarray(self.elevation, dtype=np.float64)
        sem = np.asarray(self.semantics)
        if elev.ndim != 2 or elev.shape != sem.shape:
            raise GeometryError(
                f"elevation and semantics must be matching 2-D rasters, got {elev.shape} and {sem.shape}"
            )
        if not np.all(np.isfinite(elev)) or (elev.size and elev.min() < 0):
            raise GeometryError("elevation values must be finite and >= 0")
        if not self.cell_size > 0:
            raise GeometryError("cell_size must be positive")
        if sem.size and sem.min() < 0:
            raise GeometryError("semantics must be non-negative class ids")
        object.__setattr__(self, "elevation", elev)
        object.__setattr__(self, "semantics", sem.astype(np.uint16))
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.elevation.shape[0]

    @property
    def width(self) -> int:
        return self.elevation.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the footprint."""
        h = self.cell_size / 2.0
        x0, y0 = self.origin
        return (x0 - h, x0 - h + self.width * self.cell_size,
                y0 + h - self.height * self.cell_size, y0 + h)

    def validate(self, registry: ClassRegistry) -> None:
        registry.check_ids(self.semantics)
        if np.any(self.semantics == registry.sky_id):
            raise ConfigurationError("height field cells may not carry the sky class")

    def cell_index(self, x, y):
        """(row, col, inside) for world coordinates."""
        xmin, _, _, ymax = self.bounds
        col = np.floor((np.asarray(x, dtype=np.float64) - xmin) / self.cell_size).astype(np.int64)
        row = np.floor((ymax - np.asarray(y, dtype=np.float64)) / self.cell_size).astype(np.int64)
        inside = (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)
        return row, col, inside

    def contains(self, x, y):
        return self.cell_index(x, y)[2]

    def cell_centers(self):
        """(xs, ys) world coordinates of every cell center, shaped like the raster."""
        cols = np.arange(self.width)
        rows = np.arange(self.height)
        xs = self.origin[0] + cols[None, :] * self.cell_size
        ys = self.origin[1] - rows[:, None] * self.cell_size
        return np.broadcast_to(xs, self.elevation.shape), np.broadcast_to(ys, self.elevation.shape)


@dataclass(frozen=True, eq=False)
class Trajectory:
    locations: np.ndarray
    headings: np.ndarray
    camera_height: float = DEFAULT_CAMERA_HEIGHT
    center_index: int = 0

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64).reshape(-1, 2)
        heads = np.broadcast_to(np.asarray(self.headings, dtype=np.float64), (len(loc),)).copy()
        if len(loc) < 1:
            raise GeometryError("trajectory needs at least one location")
        if not 0 <= self.center_index < len(loc):
            raise GeometryError(f"center_index {self.center_index} outside [0, {len(loc)})")
        if not self.camera_height > 0:
            raise GeometryError("camera_height must be positive")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "headings", heads)
        object.__setattr__(self, "camera_height", float(self.camera_height))
        object.__setattr__(self, "center_index", int(self.center_index))

    def __len__(self):
        return len(self.locations)

    @classmethod
    def straight(cls, center, heading=0.0, range_m=7.0, step_m=0.5,
                 camera_height=DEFAULT_CAMERA_HEIGHT) -> "Trajectory":
        """Forward path through ``center``, ``range_m / 2`` behind to ``range_m / 2`` ahead."""
        half = int(round(range_m / 2.0 / step_m))
        if not math.isclose(half * step_m, range_m / 2.0, rel_tol=0, abs_tol=1e-9):
            raise ConfigurationError(f"range_m/2 = {range_m / 2} is not a multiple of step_m = {step_m}")
        offsets = np.arange(-half, half + 1) * step_m
        forward = np.array([math.sin(heading), math.cos(heading)])
        locs = np.asarray(center, dtype=np.float64)[None, :] + offsets[:, None] * forward[None, :]
        return cls(locs, np.full(len(locs), float(heading)), camera_height, half)

    @classmethod
    def uturn(cls, center, heading=0.0, frames=60, step_m=0.5,
              camera_height=DEFAULT_CAMERA_HEIGHT) -> "Trajectory":
        """Out-and-back path: frames ``0..T/2-1`` go out, ``T/2..T-1`` revisit them reversed.

        Frame ``i`` and frame ``T-1-i`` share a location bit-for-bit and face
        opposite directions.
        """
        if frames < 2 or frames % 2:
            raise ConfigurationError(f"u-turn trajectory needs an even frame count >= 2, got {frames}")
        n = frames // 2
        offsets = (np.arange(n) - (n - 1) / 2.0) * step_m
        forward = np.array([math.sin(heading), math.cos(heading)])
        out = np.asarray(center, dtype=np.float64)[None, :] + offsets[:, None] * forward[None, :]
        locs = np.concatenate([out, out[::-1]])
        back = math.fmod(heading + math.pi, 2.0 * math.pi)
        heads = np.concatenate([np.full(n, float(heading)), np.full(n, back)])
        return cls(locs, heads, camera_height, (n - 1) // 2)

    def camera_positions(self) -> np.ndarray:
        z = np.full((len(self), 1), self.camera_height)
        return np.hstack([self.locations, z])

    def check_inside(self, field: SemanticHeightField) -> None:
        inside = field.contains(self.locations[:, 0], self.locations[:, 1])
        if not np.all(inside):
            bad = np.flatnonzero(~inside).tolist()
            raise GeometryError(f"trajectory locations {bad} lie outside the height-field footprint")


# --------------------------------------------------------------------------
# Point cloud, point-pixel map, frames
# --------------------------------------------------------------------------

def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered point set. Indices are identities, so clouds only ever grow by appending."""

    positions: np.ndarray
    semantics: np.ndarray | None = None
    sky: np.ndarray | None = None
    rgb: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        object.__setattr__(self, "positions", _frozen(pos))
        sem = np.zeros(n, np.uint16) if self.semantics is None else np.asarray(self.semantics)
        sky = np.zeros(n, bool) if self.sky is None else np.asarray(self.sky, dtype=bool)
        for name, arr in (("semantics", sem), ("sky", sky)):
            if arr.shape != (n,):
                raise GeometryError(f"{name} channel has shape {arr.shape}, expected ({n},)")
        object.__setattr__(self, "semantics", _frozen(sem.astype(np.uint16)))
        object.__setattr__(self, "sky", _frozen(sky))
        if self.rgb is not None:
            rgb = np.asarray(self.rgb)
            if rgb.shape != (n, 3):
                raise GeometryError(f"rgb channel has shape {rgb.shape}, expected ({n}, 3)")
            object.__setattr__(self, "rgb", _frozen(rgb.astype(np.uint8)))
        if self.features is not None:
            feat = np.asarray(self.features, dtype=np.float64)
            if feat.ndim != 2 or len(feat) != n:
                raise GeometryError(f"feature channel has shape {feat.shape}, expected ({n}, C)")
            object.__setattr__(self, "features", _frozen(feat))

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def with_(self, **channels) -> "PointCloud":
        return replace(self, **channels)

    def append(self, other: "PointCloud") -> "PointCloud":
        """Concatenate; ``other``'s points get indices after ours."""
        def cat(a, b):
            if a is None and b is None:
                return None
            if a is None or b is None:
                if len(self) == 0:
                    return b
                if len(other) == 0:
                    return a
                raise GeometryError("cannot append clouds with mismatched optional channels")
            return np.concatenate([a, b])

        return PointCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.semantics, other.semantics]),
            np.concatenate([self.sky, other.sky]),
            cat(self.rgb, other.rgb),
            cat(self.features, other.features),
        )


@dataclass(frozen=True, eq=False)
class PointPixelMap:
    """T x H x W tensor of 1-based point indices (0 only while under construction)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 3:
            raise GeometryError(f"point-pixel map must be T x H x W, got shape {idx.shape}")
        object.__setattr__(self, "indices", _frozen(idx.astype(np.uint32)))

    @property
    def shape(self):
        return self.indices.shape

    @property
    def T(self):
        return self.indices.shape[0]

    @property
    def H(self):
        return self.indices.shape[1]

    @property
    def W(self):
        return self.indices.shape[2]

    def check_complete(self, n_points: int) -> None:
        if self.indices.size == 0:
            return
        lo, hi = int(self.indices.min()), int(self.indices.max())
        if lo < 1 or hi > n_points:
            raise GeometryError(f"map entries span [{lo}, {hi}], expected within [1, {n_points}]")


FRAME_KINDS = ("rgb", "class", "depth", "feature", "mask")


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Raster frames in trajectory order.

    ``data`` is (T, H, W) for class/depth frames and (T, H, W, C) for RGB or
    feature frames. ``mask`` (T, H, W) bool marks valid pixels where relevant.
    """

    data: np.ndarray
    kind: str
    cameras: Sequence | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in FRAME_KINDS:
            raise ConfigurationError(f"unknown frame kind {self.kind!r}")
        data = np.asarray(self.data)
        if data.ndim not in (3, 4):
            raise GeometryError(f"frames must be (T, H, W[, C]), got shape {data.shape}")
        if self.kind == "depth" and data.size and (not np.all(np.isfinite(data)) or data.min() <= 0):
            raise GeometryError("depth frames must be positive and finite")
        object.__setattr__(self, "data", data)
        if self.mask is not None and np.shape(self.mask) != data.shape[:3]:
            raise GeometryError("mask shape must be (T, H, W)")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, t):
        return self.data[t]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


__all__ = [
    "ClassRegistry",
    "FrameSequence",
    "PointCloud",
    "PointPixelMap",
    "SemanticClass",
    "SemanticHeightField",
    "Trajectory",
    "WorldConventions",
    "class_registry_default",
    "column_bearings",
    "direction_to_pixel",
    "heading_column_shift",
    "pixel_azimuth",
    "pixel_directions",
    "pixel_elevation",
    "ray_direction",
    "world_conventions",
]
