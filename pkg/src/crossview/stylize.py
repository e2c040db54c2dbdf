"""Deterministic stand-ins for the learned generation stage.

:func:`attentive_pool` is the class-masked mean used to build one latent
vector per semantic class. :func:`stylize_points` colors points (not
pixels) from their class and a position hash, so anything rendered through
a point-pixel map inherits its consistency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, GeometryError
from .scene import ClassRegistry, FrameSequence, PointCloud

LATENT_DIM = 16
FEATURE_DIM = 64


@dataclass(frozen=True, eq=False)
class LatentSet:
    vectors: dict

    def __getitem__(self, class_id):
        return self.vectors[class_id]

    def __len__(self):
        return len(self.vectors)

    def to_json(self) -> str:
        return json.dumps({str(k): [float(x) for x in v] for k, v in sorted(self.vectors.items())})

    @classmethod
    def from_json(cls, text: str) -> "LatentSet":
        doc = json.loads(text)
        return cls({int(k): np.asarray(v, dtype=np.float64) for k, v in doc.items()})


def class_masks(semantics, classes=None) -> dict:
    """One boolean mask per class present in ``semantics`` (or per requested class)."""
    semantics = np.asarray(semantics)
    if classes is None:
        classes = np.unique(semantics).tolist()
    return {int(c): semantics == c for c in classes}


def attentive_pool(features, masks) -> LatentSet:
    """Masked mean of a feature map per class.

    Args:
        features: (H, W, C) feature map.
        masks: mapping ``class_id -> (H, W)`` binary mask.

    Raises:
        GeometryError: a mask selects no pixels.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 3:
        raise GeometryError(f"feature map must be H x W x C, got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise GeometryError("feature map has non-finite values")
    out = {}
    for c, mask in masks.items():
        S = np.asarray(mask, dtype=np.float64)
        if S.shape != F.shape[:2]:
            raise GeometryError(f"mask for class {c} has shape {S.shape}, expected {F.shape[:2]}")
        total = S.sum()
        if total <= 0:
            raise GeometryError(f"mask for class {c} is empty")
        flat = (S[:, :, None] * F).reshape(-1, F.shape[2])
        out[int(c)] = flat.sum(axis=0) / total
    return LatentSet(out)


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def point_hash(positions, classes, seed: int) -> np.ndarray:
    """64-bit hash of (position rounded to 1 um, class, seed) per point."""
    q = np.round(np.asarray(positions, dtype=np.float64) * 1e6).astype(np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix(np.full(len(q), np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
        for j in range(3):
            h = _splitmix(h ^ q[:, j])
        h = _splitmix(h ^ np.asarray(classes).astype(np.uint64))
    return h


def brightness(positions, classes, seed: int) -> np.ndarray:
    """Per-point factor in [0.8, 1.2)."""
    h = point_hash(positions, classes, seed)
    return 0.8 + 0.4 * (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def stylize_points(cloud: PointCloud, registry: ClassRegistry, seed: int = 0,
                   modulate: bool = True) -> np.ndarray:
    """Class display color times a position-hashed brightness, as (N, 3) uint8."""
    classes = cloud.semantics
    try:
        registry.check_ids(classes)
    except ConfigurationError as exc:
        raise ConfigurationError(f"cannot stylize: {exc}") from exc
    base = registry.palette()[classes].astype(np.float64)
    if not modulate:
        return base.astype(np.uint8)
    f = brightness(cloud.positions, classes, seed)
    return np.floor(base * f[:, None] + 0.5).clip(0, 255).astype(np.uint8)


def _bilinear_axis(a, axis):
    n = a.shape[axis]
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    w = src - i0
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    shape = [1] * a.ndim
    shape[axis] = 2 * n
    w = w.reshape(shape)
    return np.take(a, lo, axis=axis) * (1.0 - w) + np.take(a, hi, axis=axis) * w


def upsample2x(frames):
    """Bilinear 2x upsampling with half-pixel alignment and clamped edges.

    Accepts a :class:`FrameSequence` or an array shaped (T, H, W[, C]);
    returns the same kind of object. uint8 data is rounded half-up.
    """
    seq = frames if isinstance(frames, FrameSequence) else None
    data = np.asarray(seq.data if seq is not None else frames)
    out = _bilinear_axis(_bilinear_axis(data.astype(np.float64), 1), 2)
    if data.dtype == np.uint8:
        out = np.floor(out + 0.5).clip(0, 255).astype(np.uint8)
    if seq is None:
        return out
    return FrameSequence(out, seq.kind, seq.cameras)
