"""Semantic occupancy grids and feature voxelization.

Occupancy is built by solid-column extrusion of a :class:`SemanticHeightField`:
every cell contributes one ground-layer voxel (z in [-dz, 0]) plus
``ceil(elevation / dz)`` voxels stacked on top of it, all carrying the
cell's class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import GeometryError
from .scene import ClassRegistry, PointCloud, SemanticHeightField, class_registry_default

DEFAULT_VERTICAL_VOXEL = 0.25
DEFAULT_FEATURE_VOXEL = 0.03125

_CEIL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Sparse semantic occupancy over an axis-aligned box.

    ``coords`` holds unique (ix, iy, iz) voxel coordinates in lexicographic
    order, ``classes`` the class id of each. ``voxel_size`` is per axis.
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]
    coords: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        vs = np.broadcast_to(np.asarray(self.voxel_size, dtype=np.float64), (3,))
        if len(dims) != 3 or min(dims) < 1:
            raise GeometryError(f"grid dims must be three positive counts, got {self.dims}")
        if np.any(vs <= 0):
            raise GeometryError("voxel sizes must be positive")
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        classes = np.asarray(self.classes).reshape(-1)
        if len(classes) != len(coords):
            raise GeometryError("coords and classes must have the same length")
        if len(coords):
            if coords.min() < 0 or np.any(coords >= np.array(dims)):
                raise GeometryError("occupied voxel coordinate outside grid dims")
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        coords, classes = coords[order], classes[order]
        if len(coords) > 1 and np.any(np.all(coords[1:] == coords[:-1], axis=1)):
            raise GeometryError("duplicate occupied voxel coordinates")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in vs))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "classes", classes.astype(np.uint16))

    def __len__(self):
        return len(self.coords)

    @property
    def is_isotropic(self) -> bool:
        return self.voxel_size[0] == self.voxel_size[1] == self.voxel_size[2]

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + n * s for o, n, s in zip(self.origin, self.dims, self.voxel_size))

    @cached_property
    def dense(self) -> np.ndarray:
        """(nx, ny, nz) int16 raster: 0 = free, otherwise class id + 1."""
        grid = np.zeros(self.dims, dtype=np.int16)
        if len(self.coords):
            grid[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = self.classes.astype(np.int16) + 1
        return grid

    @classmethod
    def from_dense(cls, dense, voxel_size, origin) -> "VoxelGrid":
        dense = np.asarray(dense)
        coords = np.argwhere(dense > 0)
        classes = dense[dense > 0] - 1
        return cls(dense.shape, voxel_size, origin, coords, classes)

    def voxel_bounds(self):
        """(lo, hi) world-space corners of every occupied voxel, each (N, 3)."""
        o = np.asarray(self.origin)
        s = np.asarray(self.voxel_size)
        return o + self.coords * s, o + (self.coords + 1) * s


def _column_counts(elevation, vertical_voxel):
    return np.ceil(elevation / vertical_voxel - _CEIL_TOL).clip(min=0).astype(np.int64)


def build_occupancy(field: SemanticHeightField, vertical_voxel: float = DEFAULT_VERTICAL_VOXEL,
                    horizontal_voxel: float | None = None,
                    max_height: float | None = None) -> VoxelGrid:
    """Extrude a semantic height field into a solid-column occupancy grid.

    Args:
        field: Ground elevation and class per cell.
        vertical_voxel: Voxel height in meters.
        horizontal_voxel: Voxel footprint in meters; must divide ``field.cell_size``.
            Defaults to the cell size.
        max_height: Top of the grid above the ground datum. Defaults to the
            highest elevation in the field.

    Returns:
        VoxelGrid whose origin is the south-west corner of the footprint at
        ``z = -vertical_voxel`` (the bottom of the ground layer).
    """
    cs = field.cell_size
    hv = cs if horizontal_voxel is None else float(horizontal_voxel)
    if hv > cs * (1 + 1e-12):
        raise GeometryError(f"horizontal voxel {hv} m exceeds the height-field cell size {cs} m")
    ratio = cs / hv
    if abs(ratio - round(ratio)) > 1e-9:
        raise GeometryError(f"cell size {cs} m is not an integer multiple of horizontal voxel {hv} m")
    ratio = int(round(ratio))
    if vertical_voxel <= 0:
        raise GeometryError("vertical_voxel must be positive")
    top = float(field.elevation.max()) if max_height is None else float(max_height)
    too_high = np.argwhere(field.elevation > top)
    if len(too_high):
        listed = ", ".join(f"({r},{c})" for r, c in too_high[:20].tolist())
        more = f" and {len(too_high) - 20} more" if len(too_high) > 20 else ""
        raise GeometryError(f"elevation exceeds max_height={top} m at cells (row,col): {listed}{more}")

    nz = 1 + int(math.ceil(top / vertical_voxel - _CEIL_TOL)) if top > 0 else 1
    # Grid y runs north, raster rows run south.
    counts = _column_counts(field.elevation, vertical_voxel)[::-1].T
    labels = field.semantics[::-1].T.astype(np.int16)
    counts = np.repeat(np.repeat(counts, ratio, axis=0), ratio, axis=1)
    labels = np.repeat(np.repeat(labels, ratio, axis=0), ratio, axis=1)
    z = np.arange(nz)
    dense = np.where(z[None, None, :] <= counts[:, :, None], labels[:, :, None] + 1, 0).astype(np.int16)
    xmin, _, ymin, _ = field.bounds
    return VoxelGrid.from_dense(dense, (hv, hv, float(vertical_voxel)), (xmin, ymin, -float(vertical_voxel)))


def expected_occupied_count(field: SemanticHeightField, vertical_voxel: float,
                            horizontal_voxel: float | None = None) -> int:
    """Closed-form voxel count of :func:`build_occupancy` for ``field``."""
    hv = field.cell_size if horizontal_voxel is None else horizontal_voxel
    per_cell = int(round(field.cell_size / hv)) ** 2
    return int((_column_counts(field.elevation, vertical_voxel) + 1).sum()) * per_cell


# --------------------------------------------------------------------------
# Feature voxelization
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureVoxelization:
    voxel_size: float
    keys: np.ndarray         # (V, 3) int64 voxel coordinates, lexicographic
    features: np.ndarray     # (V, C) mean feature per voxel
    assignment: np.ndarray   # (N,) voxel row for each input point

    def __len__(self):
        return len(self.keys)


def voxel_keys(positions, voxel_size):
    return np.floor(np.asarray(positions, dtype=np.float64) / voxel_size).astype(np.int64)


def _group_mean(values, groups, n_groups):
    # Pivot on each group's first member so constant groups average exactly.
    _, first = np.unique(groups, return_index=True)
    pivot = values[first]
    sums = np.zeros((n_groups, values.shape[1]), dtype=np.float64)
    np.add.at(sums, groups, values - pivot[groups])
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    return pivot + sums / counts[:, None]


class FeatureVoxelizer(TransformerMixin, BaseEstimator):
    """Average point features into voxels and scatter them back.

    ``fit`` takes point positions (N, 3); ``transform`` maps per-point
    features (N, C) to per-voxel means (V, C); ``inverse_transform`` maps
    voxel features back to the fitted points (devoxelization).

    Parameters
    ----------
    voxel_size : float, default=0.03125
        Edge length of the cubic voxels in meters (32 voxels per meter).
    """

    def __init__(self, voxel_size=DEFAULT_FEATURE_VOXEL):
        self.voxel_size = voxel_size

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != 3:
            raise ValueError(f"expected (N, 3) positions, got {X.shape}")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if len(X):
            keys, inverse = np.unique(voxel_keys(X, self.voxel_size), axis=0, return_inverse=True)
        else:
            keys, inverse = np.zeros((0, 3), np.int64), np.zeros(0, np.int64)
        self.voxel_keys_ = keys
        self.assignment_ = inverse.reshape(-1)
        self.n_voxels_ = len(keys)
        return self

    def transform(self, X):
        check_is_fitted(self, "assignment_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if len(X) != len(self.assignment_):
            raise ValueError(f"expected {len(self.assignment_)} feature rows, got {len(X)}")
        if len(X) == 0:
            return np.zeros((0, X.shape[1]))
        return _group_mean(X, self.assignment_, self.n_voxels_)

    def inverse_transform(self, X):
        check_is_fitted(self, "assignment_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if len(X) != self.n_voxels_:
            raise ValueError(f"expected {self.n_voxels_} voxel rows, got {len(X)}")
        return X[self.assignment_]


def voxelize_features(cloud: PointCloud, voxel_size: float = DEFAULT_FEATURE_VOXEL) -> FeatureVoxelization:
    if cloud.features is None:
        raise GeometryError("point cloud has no feature channel")
    vox = FeatureVoxelizer(voxel_size).fit(cloud.positions)
    feats = vox.transform(cloud.features) if len(cloud) else np.zeros((0, cloud.features.shape[1]))
    return FeatureVoxelization(float(voxel_size), vox.voxel_keys_, feats, vox.assignment_)


def _lookup_keys(table, keys):
    """Row of each key in the lexicographically sorted ``table``; -1 if absent."""
    if len(table) == 0:
        return np.full(len(keys), -1, dtype=np.int64)
    lo = table.min(axis=0)
    extent = table.max(axis=0) - lo + 1
    inside = np.all((keys >= lo) & (keys < lo + extent), axis=1)

    def encode(k):
        k = k - lo
        return (k[:, 0] * extent[1] + k[:, 1]) * extent[2] + k[:, 2]

    codes = encode(table)
    rows = np.full(len(keys), -1, dtype=np.int64)
    q = encode(keys[inside])
    pos = np.searchsorted(codes, q).clip(max=len(codes) - 1)
    hit = codes[pos] == q
    sub = np.full(len(q), -1, dtype=np.int64)
    sub[hit] = pos[hit]
    rows[inside] = sub
    return rows


def devoxelize(vox: FeatureVoxelization, cloud: PointCloud) -> np.ndarray:
    """Give every point of ``cloud`` the feature of the voxel containing it."""
    rows = _lookup_keys(vox.keys, voxel_keys(cloud.positions, vox.voxel_size))
    if np.any(rows < 0):
        missing = np.flatnonzero(rows < 0)
        raise GeometryError(f"{len(missing)} points fall outside every voxel, first index {missing[0]}")
    return vox.features[rows]


def gather_point_semantics(cloud: PointCloud, field: SemanticHeightField, sky=None,
                           registry: ClassRegistry | None = None) -> np.ndarray:
    """Label each point with the class of the height-field cell under it.

    Points flagged as sky (``sky`` or ``cloud.sky``) get the sky class no
    matter where they are.
    """
    registry = registry or class_registry_default()
    sky = cloud.sky if sky is None else np.asarray(sky, dtype=bool)
    pos = cloud.positions
    row, col, inside = field.cell_index(pos[:, 0], pos[:, 1])
    outside = ~inside & ~sky
    if np.any(outside):
        raise GeometryError(
            f"{int(outside.sum())} non-sky points lie outside the footprint, first index {np.flatnonzero(outside)[0]}"
        )
    labels = np.full(len(cloud), registry.sky_id, dtype=np.uint16)
    ground = ~sky
    labels[ground] = field.semantics[row[ground], col[ground]]
    return labels
