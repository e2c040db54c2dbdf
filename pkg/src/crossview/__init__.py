"""Satellite-to-street-view panorama video geometry.

Semantic occupancy grids, equirectangular z-buffering, visible-point
extraction with a dense point-pixel map, ground-truth video construction,
and the evaluation metrics, without any learned components.
"""

import os

import numba

# The bundled TBB is often too old; fall back quietly instead of warning.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .colorize import (  # noqa: E402
    KNNColorizer,
    KNNLabelVoter,
    build_ground_truth_video,
    fill_depth_holes,
    ground_truth_geometry,
    knn_colorize_rgb,
    knn_label_vote,
    misalignment_mask,
    normalize_depth,
)
from .extraction import (  # noqa: E402
    ExtractionResult,
    VisiblePointExtractor,
    extract,
    frame_order,
    render_channel,
)
from .metrics import (  # noqa: E402
    MetricReport,
    direction_adjust,
    mse,
    psnr,
    self_consistency,
    sharp_diff,
    ssim,
    uturn_pairs,
)
from .panorama import (  # noqa: E402
    DepthSemanticsMap,
    PanoramaCamera,
    cast_rays,
    project,
    unproject,
    warp_satellite,
    zbuffer,
)
from .scene import (  # noqa: E402
    ClassRegistry,
    FrameSequence,
    PointCloud,
    PointPixelMap,
    SemanticHeightField,
    Trajectory,
    class_registry_default,
    world_conventions,
)
from .stylize import LatentSet, attentive_pool, stylize_points, upsample2x  # noqa: E402
from .voxelizer import (  # noqa: E402
    FeatureVoxelizer,
    VoxelGrid,
    build_occupancy,
    devoxelize,
    gather_point_semantics,
    voxelize_features,
)

__all__ = [
    "ClassRegistry",
    "DepthSemanticsMap",
    "ExtractionResult",
    "FeatureVoxelizer",
    "FrameSequence",
    "KNNColorizer",
    "KNNLabelVoter",
    "LatentSet",
    "MetricReport",
    "PanoramaCamera",
    "PointCloud",
    "PointPixelMap",
    "SemanticHeightField",
    "Trajectory",
    "VisiblePointExtractor",
    "VoxelGrid",
    "attentive_pool",
    "build_ground_truth_video",
    "build_occupancy",
    "cast_rays",
    "class_registry_default",
    "devoxelize",
    "direction_adjust",
    "extract",
    "fill_depth_holes",
    "frame_order",
    "gather_point_semantics",
    "ground_truth_geometry",
    "knn_colorize_rgb",
    "knn_label_vote",
    "misalignment_mask",
    "mse",
    "normalize_depth",
    "project",
    "psnr",
    "render_channel",
    "self_consistency",
    "sharp_diff",
    "ssim",
    "stylize_points",
    "unproject",
    "upsample2x",
    "uturn_pairs",
    "voxelize_features",
    "warp_satellite",
    "world_conventions",
    "zbuffer",
    "set_threads",
]

__version__ = "0.1.0"


def set_threads(n: int | None = None) -> int:
    """Cap worker threads for the parallel kernels; returns the count in effect.

    ``None`` reads ``CROSSVIEW_THREADS``. Requests above the machine's
    thread pool are clamped. Results never depend on the thread count.
    """
    if n is None:
        env = os.environ.get("CROSSVIEW_THREADS")
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
