"""Visible-point extraction: grow one point set over a trajectory and map every pixel to it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateViewpointError, GeometryError, InvariantViolation
from .panorama import (
    DEFAULT_EPSILON,
    DEFAULT_SKY_RADIUS,
    project,
    trajectory_cameras,
    unproject,
    zbuffer,
)
from .scene import FrameSequence, PointCloud, PointPixelMap, Trajectory, heading_column_shift
from .voxelizer import VoxelGrid

log = logging.getLogger(__name__)


def frame_order(T: int, c: int) -> list[int]:
    """Center-out processing order ``c, c+1, c-1, c+2, c-2, ...``.

    Once one side runs out the other side continues in sequence.
    """
    if not 0 <= c < T:
        raise GeometryError(f"center index {c} outside [0, {T})")
    order = [c]
    for k in range(1, T):
        if c + k < T:
            order.append(c + k)
        if c - k >= 0:
            order.append(c - k)
    return order


@dataclass
class FrameStats:
    frame: int
    rank: int
    points_before: int
    new_points: int
    reuse_ratio: float
    reused_from: int | None = None


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    cloud: PointCloud
    mapping: PointPixelMap
    stats: list[FrameStats]
    created_at: np.ndarray
    center_index: int
    cameras: list = field(default_factory=list)

    @property
    def order(self) -> list[int]:
        return [s.frame for s in sorted(self.stats, key=lambda s: s.rank)]


def _pose_source(cam, done):
    """A processed camera whose rays are an exact column rotation of ``cam``'s.

    Returns (frame, shift) with ``M[t] = roll(M[frame], shift)``, or None.
    """
    for t, other in done:
        if other.position != cam.position or other.height != cam.height or other.width != cam.width:
            continue
        k = heading_column_shift(cam.heading - other.heading, cam.width)
        if k is not None:
            return t, (-k) % cam.width
    return None


def run_extraction(cameras, center_index, depth_fn, epsilon=DEFAULT_EPSILON, reuse_poses=True):
    """Core extraction loop over arbitrary per-frame depth sources.

    Args:
        cameras: One :class:`PanoramaCamera` per trajectory frame.
        center_index: Frame processed first.
        depth_fn: ``depth_fn(t, cam) -> DepthSemanticsMap`` for frame ``t``.
        epsilon: Relative depth band for matching existing points.
        reuse_poses: When a frame's camera is a pure column rotation of an
            already processed camera (same position, headings on the column
            grid), copy that frame's mapping shifted instead of re-matching.
            Re-matching against a point set that has grown in between could
            pick different points and break u-turn consistency.

    Returns:
        ExtractionResult with the mapping in trajectory order.
    """
    T = len(cameras)
    H, W = cameras[0].height, cameras[0].width
    cloud = PointCloud.empty()
    M = np.zeros((T, H, W), dtype=np.uint32)
    created = []
    stats = [None] * T
    done = []
    for rank, t in enumerate(frame_order(T, center_index)):
        cam = cameras[t]
        n_before = len(cloud)
        src = _pose_source(cam, done) if reuse_poses else None
        if src is not None:
            s, shift = src
            M[t] = np.roll(M[s], shift, axis=1)
            stats[t] = FrameStats(t, rank, n_before, 0, 1.0 if n_before else 0.0, s)
            done.append((t, cam))
            continue
        d = depth_fn(t, cam)
        m = project(cloud, cam, d, epsilon)
        p_a, m_a = unproject(cam, d, m, n_before)
        cloud = cloud.append(p_a)
        M[t] = m + m_a
        created.append(np.full(len(p_a), t, dtype=np.int64))
        stats[t] = FrameStats(t, rank, n_before, len(p_a), float(np.count_nonzero(m)) / m.size)
        done.append((t, cam))
        log.debug("frame %d (rank %d): %d new points, reuse %.3f", t, rank, len(p_a), stats[t].reuse_ratio)
    mapping = PointPixelMap(M)
    if M.min() < 1:
        raise InvariantViolation("extraction left pixels unmapped")
    created_at = np.concatenate(created) if created else np.zeros(0, dtype=np.int64)
    return ExtractionResult(cloud, mapping, stats, created_at, center_index, list(cameras))


def extract(grid: VoxelGrid, trajectory: Trajectory, height=256, width=512,
            epsilon=DEFAULT_EPSILON, sky_radius=DEFAULT_SKY_RADIUS, sky_class=None,
            reuse_poses=True) -> ExtractionResult:
    """Run visible-point extraction against an occupancy grid.

    Each point's class is the label of the voxel its pixel ray hit (sky for
    rays that escaped).
    """
    cameras = trajectory_cameras(trajectory, height, width)

    def depth_fn(t, cam):
        try:
            return zbuffer(grid, cam, sky_radius, sky_class)
        except DegenerateViewpointError as exc:
            raise DegenerateViewpointError(str(exc), frame=t) from exc

    return run_extraction(cameras, trajectory.center_index, depth_fn, epsilon, reuse_poses)


def render_channel(result, channel, kind=None) -> FrameSequence:
    """Gather a per-point channel into frames through the point-pixel map.

    ``result`` may be an :class:`ExtractionResult` or a bare
    :class:`PointPixelMap`.
    """
    mapping = result.mapping if isinstance(result, ExtractionResult) else result
    cameras = result.cameras if isinstance(result, ExtractionResult) else None
    channel = np.asarray(channel)
    n = int(mapping.indices.max()) if mapping.indices.size else 0
    if isinstance(result, ExtractionResult):
        n = len(result.cloud)
    if len(channel) != n:
        raise GeometryError(f"channel has {len(channel)} entries, point set has {n}")
    if kind is None:
        if channel.ndim == 2 and channel.shape[1] == 3 and channel.dtype == np.uint8:
            kind = "rgb"
        elif channel.ndim == 1 and np.issubdtype(channel.dtype, np.integer):
            kind = "class"
        elif channel.ndim == 1:
            kind = "depth"
        else:
            kind = "feature"
    frames = channel[mapping.indices.astype(np.int64) - 1]
    return FrameSequence(frames, kind, cameras)


class VisiblePointExtractor(BaseEstimator):
    """Estimator wrapper around :func:`extract`.

    ``fit(grid, trajectory)`` runs the extraction and stores it as
    ``result_``; ``transform(channel)`` renders a per-point channel.
    """

    def __init__(self, height=256, width=512, epsilon=DEFAULT_EPSILON,
                 sky_radius=DEFAULT_SKY_RADIUS, reuse_poses=True):
        self.height = height
        self.width = width
        self.epsilon = epsilon
        self.sky_radius = sky_radius
        self.reuse_poses = reuse_poses

    def fit(self, grid, trajectory):
        self.result_ = extract(grid, trajectory, self.height, self.width, self.epsilon,
                               self.sky_radius, reuse_poses=self.reuse_poses)
        self.n_points_ = len(self.result_.cloud)
        return self

    def transform(self, channel):
        check_is_fitted(self, "result_")
        return render_channel(self.result_, channel).data

    @property
    def cloud_(self):
        check_is_fitted(self, "result_")
        return self.result_.cloud

    @property
    def mapping_(self):
        check_is_fitted(self, "result_")
        return self.result_.mapping


def created_at_from_mapping(mapping: PointPixelMap, center_index: int) -> np.ndarray:
    """Recover each point's creating frame from a finished mapping.

    A point first appears, in processing order, in the frame that created it.
    """
    n = int(mapping.indices.max())
    created = np.full(n, -1, dtype=np.int64)
    for t in frame_order(mapping.T, center_index):
        idx = mapping.indices[t].reshape(-1).astype(np.int64) - 1
        fresh = idx[created[idx] < 0]
        created[fresh] = t
    return created
