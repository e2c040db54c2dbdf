"""Ground-truth video construction from a single colored center frame.

Geometry comes from the center depth: it is unprojected, splatted into the
other frames, holes are filled by diffusion, and the frames are run through
the usual extraction loop. Points seen from the center keep their exact
color and label; everything else is colored by inverse-distance weighting
and labeled by majority vote over its nearest center-frame points.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import GeometryError
from .extraction import ExtractionResult, render_channel, run_extraction
from .panorama import (
    DEFAULT_EPSILON,
    DepthSemanticsMap,
    PanoramaCamera,
    trajectory_cameras,
    unproject,
)
from .scene import DEFAULT_CAMERA_HEIGHT, FrameSequence, PointCloud, Trajectory

DEFAULT_K = 32
DEFAULT_DELTA = 1e-6
# Extra neighbors fetched so distance ties at the k-th slot resolve by index.
_TIE_SLACK = 8


def nadir_pixel(height: int, width: int) -> tuple[int, int]:
    """Bottom-row pixel of the forward-facing column."""
    return height - 1, width // 2


def normalize_depth(d: DepthSemanticsMap, target_height: float = DEFAULT_CAMERA_HEIGHT) -> DepthSemanticsMap:
    """Scale depths so the standing-point ray is ``target_height`` long.

    Sky pixels keep the sky radius; they mark "no geometry", not a distance.
    """
    p, q = nadir_pixel(*d.shape)
    if d.sky[p, q]:
        raise GeometryError("nadir pixel is sky; cannot normalize depth")
    s = target_height / d.depth[p, q]
    depth = np.where(d.sky, d.sky_radius, d.depth * s)
    return DepthSemanticsMap(depth, d.semantics, d.sky, d.sky_radius)


def _neighbor_mean(u):
    pad = np.pad(u, 1)
    ones = np.pad(np.ones_like(u), 1)
    total = pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:]
    count = ones[:-2, 1:-1] + ones[2:, 1:-1] + ones[1:-1, :-2] + ones[1:-1, 2:]
    return total / count


def fill_depth_holes(depth, invalid, tol: float = 1e-6, max_iter: int = 200_000,
                     omega: float = 1.5) -> np.ndarray:
    """Fill invalid pixels by repeated 4-neighbor averaging.

    Uses red-black over-relaxed sweeps, starting from the nearest valid
    value, until the largest relative update drops below ``tol``. Valid
    pixels are never modified. Neighbors outside the raster are ignored.
    """
    depth = np.asarray(depth, dtype=np.float64)
    invalid = np.asarray(invalid, dtype=bool)
    if invalid.all():
        raise GeometryError("cannot fill a raster with no valid pixels")
    if not invalid.any():
        return depth.copy()
    _, (ri, ci) = ndimage.distance_transform_edt(invalid, return_indices=True)
    u = depth[ri, ci].astype(np.float64)
    rows, cols = np.indices(u.shape)
    phases = [invalid & ((rows + cols) % 2 == k) for k in (0, 1)]
    for _ in range(max_iter):
        delta = 0.0
        for mask in phases:
            target = _neighbor_mean(u)[mask]
            old = u[mask]
            new = old + omega * (target - old)
            u[mask] = new
            scale = np.maximum(np.abs(new), 1e-300)
            if new.size:
                delta = max(delta, float(np.max(np.abs(new - old) / scale)))
        if delta < tol:
            break
    return u


def _sorted_neighbors(tree, n_sources, X, k):
    kk = min(k + _TIE_SLACK, n_sources)
    dist, idx = tree.query(X, k=kk)
    dist = dist.reshape(len(X), kk)
    idx = idx.reshape(len(X), kk)
    order = np.lexsort((idx, dist), axis=1)
    dist = np.take_along_axis(dist, order, axis=1)[:, :k]
    idx = np.take_along_axis(idx, order, axis=1)[:, :k]
    return dist, idx


class KNNColorizer(RegressorMixin, BaseEstimator):
    """Inverse-distance-weighted color transfer from nearest source points.

    Weights are ``1 / (distance + delta)``; outputs are rounded half-up to
    uint8. Neighbors are ordered by (distance, source index).
    """

    def __init__(self, n_neighbors=DEFAULT_K, delta=DEFAULT_DELTA):
        self.n_neighbors = n_neighbors
        self.delta = delta

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        self.tree_ = cKDTree(X)
        self.colors_ = y
        self.k_ = min(self.n_neighbors, len(X))
        return self

    def kneighbors(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        return _sorted_neighbors(self.tree_, len(self.colors_), X, self.k_)

    def predict(self, X):
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if len(X) == 0:
            return np.zeros((0, self.colors_.shape[1]), dtype=np.uint8)
        dist, idx = self.kneighbors(X)
        w = 1.0 / (dist + self.delta)
        rgb = np.einsum("nk,nkc->nc", w, self.colors_[idx]) / w.sum(axis=1, keepdims=True)
        return np.floor(rgb + 0.5).clip(0, 255).astype(np.uint8)


class KNNLabelVoter(ClassifierMixin, BaseEstimator):
    """Unweighted majority label over the nearest source points.

    Among tied labels the one held by the nearest neighbor wins.
    """

    def __init__(self, n_neighbors=DEFAULT_K):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y).astype(np.int64)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        self.tree_ = cKDTree(X)
        self.labels_ = y
        self.classes_ = np.unique(y)
        self.k_ = min(self.n_neighbors, len(X))
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        _, idx = _sorted_neighbors(self.tree_, len(self.labels_), X, self.k_)
        labels = self.labels_[idx]
        n, k = labels.shape
        # counts[i, j]: how often neighbor j's label occurs among i's neighbors
        counts = (labels[:, :, None] == labels[:, None, :]).sum(axis=2)
        best = counts.max(axis=1, keepdims=True)
        first_best = np.argmax(counts == best, axis=1)
        return labels[np.arange(n), first_best]


def _check_sources(positions):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) == 0:
        raise GeometryError("no source points to colorize from")
    return positions


def knn_colorize_rgb(targets: PointCloud, source_positions, source_rgb, k: int = DEFAULT_K,
                     known=None, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """RGB per target point; rows flagged in ``known`` keep ``targets.rgb``."""
    src = _check_sources(source_positions)
    out = np.zeros((len(targets), 3), dtype=np.uint8)
    todo = np.ones(len(targets), dtype=bool)
    if known is not None:
        known = np.asarray(known, dtype=bool)
        out[known] = targets.rgb[known]
        todo = ~known
    if todo.any():
        model = KNNColorizer(k, delta).fit(src, np.asarray(source_rgb))
        out[todo] = model.predict(targets.positions[todo])
    return out


def knn_label_vote(targets: PointCloud, source_positions, source_labels, k: int = DEFAULT_K,
                   known=None) -> np.ndarray:
    """Class per target point by neighbor vote; rows in ``known`` keep ``targets.semantics``."""
    src = _check_sources(source_positions)
    out = np.zeros(len(targets), dtype=np.uint16)
    todo = np.ones(len(targets), dtype=bool)
    if known is not None:
        known = np.asarray(known, dtype=bool)
        out[known] = targets.semantics[known]
        todo = ~known
    if todo.any():
        model = KNNLabelVoter(k).fit(src, source_labels)
        out[todo] = model.predict(targets.positions[todo])
    return out


# --------------------------------------------------------------------------
# Ground-truth geometry and video
# --------------------------------------------------------------------------

def splat_depth(cloud: PointCloud, cam: PanoramaCamera, sky_radius: float):
    """Nearest point per pixel. Returns (depth, semantics, sky, hole) rasters."""
    H, W = cam.height, cam.width
    p, q, r = cam.locate(cloud.positions)
    pix = p * W + q
    order = np.lexsort((np.arange(len(r)), r, pix))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    win = order[first]
    depth = np.zeros(H * W)
    sem = np.zeros(H * W, dtype=np.uint16)
    sky = np.zeros(H * W, dtype=bool)
    hole = np.ones(H * W, dtype=bool)
    depth[pix[win]] = r[win]
    sem[pix[win]] = cloud.semantics[win]
    sky[pix[win]] = cloud.sky[win]
    hole[pix[win]] = False
    depth[sky] = sky_radius
    shape = (H, W)
    return depth.reshape(shape), sem.reshape(shape), sky.reshape(shape), hole.reshape(shape)


def ground_truth_geometry(center_depth: DepthSemanticsMap, trajectory: Trajectory,
                          epsilon: float = DEFAULT_EPSILON, reuse_poses: bool = True) -> ExtractionResult:
    """Extraction whose per-frame depth comes from the center depth map.

    The center frame uses ``center_depth`` directly. Every other frame
    splats the unprojected center cloud and fills the holes by diffusion;
    filled pixels take the class of the nearest splatted pixel.
    """
    H, W = center_depth.shape
    cameras = trajectory_cameras(trajectory, H, W)
    c = trajectory.center_index
    seeds, _ = unproject(cameras[c], center_depth, np.zeros((H, W), np.uint32), 0)
    sky_radius = center_depth.sky_radius

    def depth_fn(t, cam):
        if t == c:
            return center_depth
        depth, sem, sky, hole = splat_depth(seeds, cam, sky_radius)
        depth = fill_depth_holes(depth, hole)
        if hole.any():
            _, (ri, ci) = ndimage.distance_transform_edt(hole, return_indices=True)
            sem = sem[ri, ci]
        depth = np.where(sky, sky_radius, np.minimum(depth, sky_radius))
        return DepthSemanticsMap(depth, sem, sky, sky_radius)

    return run_extraction(cameras, c, depth_fn, epsilon, reuse_poses)


def build_ground_truth_video(center_rgb, center_semantics, center_depth: DepthSemanticsMap,
                             extraction: ExtractionResult, k: int = DEFAULT_K):
    """Color and label every extracted point, then render both videos.

    Points created by the center frame take their pixel's color and class
    verbatim. The rest are filled from the unprojected center frame by
    :func:`knn_colorize_rgb` and :func:`knn_label_vote`.

    Returns:
        (rgb FrameSequence, semantics FrameSequence)
    """
    center_rgb = np.asarray(center_rgb, dtype=np.uint8)
    center_semantics = np.asarray(center_semantics).astype(np.uint16)
    H, W = center_depth.shape
    if center_rgb.shape != (H, W, 3) or center_semantics.shape != (H, W):
        raise GeometryError("center RGB, semantics and depth rasters must share H x W")
    if extraction.mapping.H != H or extraction.mapping.W != W:
        raise GeometryError("extraction raster size differs from the center frame")
    c = extraction.center_index
    cam = extraction.cameras[c]
    seeds, _ = unproject(cam, center_depth, np.zeros((H, W), np.uint32), 0)

    cloud = extraction.cloud
    n = len(cloud)
    known = np.zeros(n, dtype=bool)
    rgb = np.zeros((n, 3), dtype=np.uint8)
    sem = np.zeros(n, dtype=np.uint16)
    center_idx = extraction.mapping.indices[c].reshape(-1).astype(np.int64) - 1
    own = extraction.created_at[center_idx] == c
    known[center_idx[own]] = True
    rgb[center_idx[own]] = center_rgb.reshape(-1, 3)[own]
    sem[center_idx[own]] = center_semantics.reshape(-1)[own]
    targets = cloud.with_(rgb=rgb, semantics=sem)

    rgb = knn_colorize_rgb(targets, seeds.positions, center_rgb.reshape(-1, 3), k, known)
    sem = knn_label_vote(targets, seeds.positions, center_semantics.reshape(-1), k, known)
    return render_channel(extraction, rgb, "rgb"), render_channel(extraction, sem, "class")


def misalignment_mask(rendered: FrameSequence, reference: FrameSequence) -> FrameSequence:
    """Weight 1 where the two label videos agree, 0 where they differ."""
    a, b = np.asarray(rendered.data), np.asarray(reference.data)
    if a.shape != b.shape:
        raise GeometryError(f"semantic sequences differ in shape: {a.shape} vs {b.shape}")
    return FrameSequence((a == b).astype(np.float64), "mask", rendered.cameras)
