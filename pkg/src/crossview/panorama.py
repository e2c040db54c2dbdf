"""Equirectangular cameras, occupancy z-buffering and point/pixel correspondence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .exceptions import DegenerateViewpointError, GeometryError, InvariantViolation
from .scene import (
    FrameSequence,
    PointCloud,
    PointPixelMap,
    SemanticHeightField,
    class_registry_default,
    direction_to_pixel,
    pixel_directions,
)
from .voxelizer import VoxelGrid

DEFAULT_SKY_RADIUS = 200.0
DEFAULT_EPSILON = 0.005

# Incremented on every successful m * m_a == 0 check; lets test harnesses
# confirm the check actually ran.
hadamard_checks = 0


@dataclass(frozen=True, eq=False)
class PanoramaCamera:
    position: tuple[float, float, float]
    heading: float
    height: int
    width: int

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise GeometryError("camera position must be (x, y, z)")
        if self.height < 2 or self.width < 2:
            raise GeometryError(f"panorama raster must be at least 2x2, got {self.height}x{self.width}")
        if not pos[2] > 0:
            raise GeometryError("camera z must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", float(self.heading))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))

    @cached_property
    def directions(self) -> np.ndarray:
        return pixel_directions(self.height, self.width, self.heading)

    def locate(self, points):
        """Pixel (p, q) and ray length r of world points, shape (N, 3)."""
        v = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.position)
        r = np.sqrt(np.einsum("ij,ij->i", v, v))
        p, q = direction_to_pixel(v, self.height, self.width, self.heading)
        return p, q, r


def trajectory_cameras(trajectory, height, width):
    return [
        PanoramaCamera(pos, head, height, width)
        for pos, head in zip(trajectory.camera_positions(), trajectory.headings)
    ]


@dataclass(frozen=True, eq=False)
class DepthSemanticsMap:
    """Per-pixel ray length (m), class id and sky mask for one frame."""

    depth: np.ndarray
    semantics: np.ndarray
    sky: np.ndarray
    sky_radius: float = DEFAULT_SKY_RADIUS

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        sem = np.asarray(self.semantics).astype(np.uint16)
        sky = np.asarray(self.sky, dtype=bool)
        if depth.ndim != 2 or sem.shape != depth.shape or sky.shape != depth.shape:
            raise GeometryError("depth, semantics and sky mask must be matching H x W rasters")
        if not np.all(np.isfinite(depth)) or (depth.size and depth.min() <= 0):
            raise GeometryError("depths must be positive and finite")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "semantics", sem)
        object.__setattr__(self, "sky", sky)
        object.__setattr__(self, "sky_radius", float(self.sky_radius))

    @property
    def shape(self):
        return self.depth.shape

    def scaled(self, factor: float) -> "DepthSemanticsMap":
        """Multiply every depth (sky included) by ``factor``."""
        return DepthSemanticsMap(self.depth * factor, self.semantics, self.sky, self.sky_radius * factor)


# --------------------------------------------------------------------------
# Grid traversal
# --------------------------------------------------------------------------

@numba.njit(inline="always")
def _clip_slab(o, d, lo, hi, t0, t1):
    if d == 0.0:
        return t0, t1, lo <= o <= hi
    ta = (lo - o) / d
    tb = (hi - o) / d
    if ta > tb:
        ta, tb = tb, ta
    if ta > t0:
        t0 = ta
    if tb < t1:
        t1 = tb
    return t0, t1, t0 <= t1


@numba.njit(inline="always")
def _start_index(o, d, org, vs, n):
    f = (o - org) / vs
    i = math.floor(f)
    if d < 0.0 and i == f:
        i -= 1
    if i < 0:
        i = 0
    elif i > n - 1:
        i = n - 1
    return int(i)


@numba.njit(inline="always")
def _next_boundary(o, d, org, vs, i):
    if d > 0.0:
        return (org + (i + 1) * vs - o) / d
    if d < 0.0:
        return (org + i * vs - o) / d
    return np.inf


@numba.njit(cache=True)
def _cast_one(dense, org, vs, ox, oy, oz, dx, dy, dz, max_t):
    nx, ny, nz = dense.shape
    t0, t1, ok = _clip_slab(ox, dx, org[0], org[0] + nx * vs[0], 0.0, max_t)
    if ok:
        t0, t1, ok = _clip_slab(oy, dy, org[1], org[1] + ny * vs[1], t0, t1)
    if ok:
        t0, t1, ok = _clip_slab(oz, dz, org[2], org[2] + nz * vs[2], t0, t1)
    if not ok or t0 >= max_t:
        return max_t, -1

    if t0 > 0.0:
        ix = _start_index(ox + t0 * dx, 0.0, org[0], vs[0], nx)
        iy = _start_index(oy + t0 * dy, 0.0, org[1], vs[1], ny)
        iz = _start_index(oz + t0 * dz, 0.0, org[2], vs[2], nz)
    else:
        ix = _start_index(ox, dx, org[0], vs[0], nx)
        iy = _start_index(oy, dy, org[1], vs[1], ny)
        iz = _start_index(oz, dz, org[2], vs[2], nz)
    sx = 1 if dx > 0.0 else -1
    sy = 1 if dy > 0.0 else -1
    sz = 1 if dz > 0.0 else -1
    tx = _next_boundary(ox, dx, org[0], vs[0], ix)
    ty = _next_boundary(oy, dy, org[1], vs[1], iy)
    tz = _next_boundary(oz, dz, org[2], vs[2], iz)

    t = t0
    while True:
        v = dense[ix, iy, iz]
        if v != 0:
            return t, v - 1
        if tx <= ty and tx <= tz:
            t = tx
            ix += sx
            if ix < 0 or ix >= nx:
                break
            tx = _next_boundary(ox, dx, org[0], vs[0], ix)
        elif ty <= tz:
            t = ty
            iy += sy
            if iy < 0 or iy >= ny:
                break
            ty = _next_boundary(oy, dy, org[1], vs[1], iy)
        else:
            t = tz
            iz += sz
            if iz < 0 or iz >= nz:
                break
            tz = _next_boundary(oz, dz, org[2], vs[2], iz)
        if t >= max_t:
            break
    return max_t, -1


@numba.njit(parallel=True, cache=True)
def _cast_many(dense, org, vs, origins, dirs, max_t, out_t, out_c):
    for i in numba.prange(origins.shape[0]):
        t, c = _cast_one(dense, org, vs, origins[i, 0], origins[i, 1], origins[i, 2],
                         dirs[i, 0], dirs[i, 1], dirs[i, 2], max_t)
        out_t[i] = t
        out_c[i] = c


def cast_rays(grid: VoxelGrid, origins, directions, max_t: float):
    """March rays through ``grid`` voxel by voxel.

    Returns the distance to the entry face of the first occupied voxel and
    its class, or ``(max_t, -1)`` for rays that leave the grid or reach
    ``max_t`` first. A ray starting inside an occupied voxel returns 0.
    """
    origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(directions)), dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    out_t = np.empty(len(dirs), dtype=np.float64)
    out_c = np.empty(len(dirs), dtype=np.int64)
    _cast_many(grid.dense, np.asarray(grid.origin, dtype=np.float64),
               np.asarray(grid.voxel_size, dtype=np.float64), origins, dirs, float(max_t), out_t, out_c)
    return out_t, out_c


def zbuffer(grid: VoxelGrid, cam: PanoramaCamera, sky_radius: float = DEFAULT_SKY_RADIUS,
            sky_class: int | None = None) -> DepthSemanticsMap:
    """Render a panoramic depth/semantics map of ``grid`` from ``cam``.

    Raises:
        DegenerateViewpointError: the camera sits inside an occupied voxel.
    """
    if sky_class is None:
        sky_class = class_registry_default().sky_id
    xmin, ymin, _ = grid.origin
    xmax, ymax, _ = grid.upper
    x, y, _ = cam.position
    if not (xmin <= x <= xmax and ymin <= y <= ymax):
        raise GeometryError(f"camera ({x:.3f}, {y:.3f}) is outside the grid footprint")
    dirs = cam.directions.reshape(-1, 3)
    t, c = cast_rays(grid, np.asarray(cam.position), dirs, sky_radius)
    hit = c >= 0
    if np.any(hit & (t <= 0.0)):
        raise DegenerateViewpointError(f"camera at {cam.position} is inside an occupied voxel")
    depth = np.where(hit, t, sky_radius)
    sem = np.where(hit, c, sky_class)
    shape = (cam.height, cam.width)
    return DepthSemanticsMap(depth.reshape(shape), sem.reshape(shape), ~hit.reshape(shape), sky_radius)


# --------------------------------------------------------------------------
# Correspondence
# --------------------------------------------------------------------------

def project(cloud: PointCloud, cam: PanoramaCamera, d: DepthSemanticsMap,
            epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Match existing points to pixels of the current frame.

    A point is a candidate for the pixel it falls in when its ray length r
    satisfies ``d(1 - eps) <= r <= d(1 + eps)``. Each pixel keeps the
    candidate with the smallest r, then the smallest index.

    Returns:
        (H, W) uint32 raster of 1-based point indices, 0 where nothing matched.
    """
    if not epsilon > 0:
        raise GeometryError("epsilon must be positive")
    H, W = cam.height, cam.width
    m = np.zeros((H, W), dtype=np.uint32)
    if len(cloud) == 0:
        return m
    p, q, r = cam.locate(cloud.positions)
    dpq = d.depth[p, q]
    cand = np.flatnonzero((r >= dpq * (1.0 - epsilon)) & (r <= dpq * (1.0 + epsilon)))
    if len(cand) == 0:
        return m
    pix = p[cand] * W + q[cand]
    order = np.lexsort((cand, r[cand], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    m.reshape(-1)[pix[win]] = (cand[win] + 1).astype(np.uint32)
    return m


def check_hadamard(m, m_a) -> None:
    global hadamard_checks
    if np.any((np.asarray(m) != 0) & (np.asarray(m_a) != 0)):
        raise InvariantViolation("m and m_a overlap: a pixel was both matched and unprojected")
    hadamard_checks += 1


def unproject(cam: PanoramaCamera, d: DepthSemanticsMap, m, offset: int):
    """Create points for the pixels ``m`` left unmatched.

    New points are appended in row-major pixel order and numbered
    ``offset + 1, offset + 2, ...`` in the returned mapping ``m_a``.

    Returns:
        (P_a, m_a): the new points (with class and sky flag from ``d``) and
        an (H, W) uint32 raster that is 0 wherever ``m`` is non-zero.
    """
    m = np.asarray(m)
    free = (m == 0).reshape(-1)
    k = int(free.sum())
    dirs = cam.directions.reshape(-1, 3)[free]
    pos = np.asarray(cam.position) + d.depth.reshape(-1)[free][:, None] * dirs
    cloud = PointCloud(pos, d.semantics.reshape(-1)[free], d.sky.reshape(-1)[free])
    m_a = np.zeros(m.size, dtype=np.uint32)
    m_a[free] = np.arange(offset + 1, offset + k + 1, dtype=np.uint32)
    m_a = m_a.reshape(m.shape)
    check_hadamard(m, m_a)
    return cloud, m_a


# --------------------------------------------------------------------------
# Satellite warping
# --------------------------------------------------------------------------

def sample_raster(raster, field: SemanticHeightField, x, y):
    """Nearest-cell lookup of a raster covering the field footprint.

    Returns (values, inside). The raster may be an integer multiple of the
    field resolution.
    """
    raster = np.asarray(raster)
    rows, cols = raster.shape[:2]
    fy, fx = rows / field.height, cols / field.width
    if fy != fx or fy < 1 or fy != int(fy):
        raise GeometryError(
            f"raster {rows}x{cols} does not cover the {field.height}x{field.width}-cell footprint "
            "at an integer scale"
        )
    size = field.cell_size / fy
    xmin, _, _, ymax = field.bounds
    col = np.floor((np.asarray(x) - xmin) / size).astype(np.int64)
    row = np.floor((ymax - np.asarray(y)) / size).astype(np.int64)
    inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
    values = np.zeros((len(col),) + raster.shape[2:], dtype=raster.dtype)
    values[inside] = raster[row[inside], col[inside]]
    return values, inside


def warp_satellite(satellite_rgb, field: SemanticHeightField, cloud: PointCloud,
                   mapping: PointPixelMap, cameras=None) -> FrameSequence:
    """Paint each point with the satellite color below it and render through ``mapping``.

    Sky points and points outside the footprint are invalid; the returned
    sequence's ``mask`` marks valid pixels.
    """
    sat = np.asarray(satellite_rgb)
    if sat.ndim != 3 or sat.shape[2] != 3:
        raise GeometryError("satellite raster must be H x W x 3")
    mapping.check_complete(len(cloud))
    colors, inside = sample_raster(sat, field, cloud.positions[:, 0], cloud.positions[:, 1])
    valid = inside & ~cloud.sky
    colors[~valid] = 0
    idx = mapping.indices.astype(np.int64) - 1
    return FrameSequence(colors[idx].astype(np.uint8), "rgb", cameras, valid[idx])
