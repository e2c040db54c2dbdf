"""Image/video quality metrics and the u-turn self-consistency protocol.

All metrics take 8-bit-range frames shaped (H, W) or (H, W, C). Log-scale
metrics are capped at 100 dB instead of going infinite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import GeometryError
from .scene import FrameSequence

PEAK = 255.0
CAP_DB = 100.0
_CAP_FLOOR = PEAK ** 2 * 1e-10
SSIM_WINDOW = 8
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2
METRIC_NAMES = ("mse", "psnr", "ssim", "sharp_diff")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise GeometryError(f"frames must be H x W or H x W x C, got {a.shape}")
    return a, b


def _weights(weights, shape):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != shape[:2]:
        raise GeometryError(f"weight mask shape {w.shape} does not match frames {shape[:2]}")
    if not np.any(w != 0):
        raise GeometryError("weight mask is all zeros")
    return w


def _channels(x):
    return x if x.ndim == 3 else x[:, :, None]


def _weighted_mean(values, w):
    """Mean over pixels and channels of an (H, W, C) array."""
    if w is None:
        return float(values.mean())
    c = values.shape[2]
    return float((values * w[:, :, None]).sum() / (w.sum() * c))


def _to_db(x):
    if x < _CAP_FLOOR:
        return CAP_DB
    return min(CAP_DB, 10.0 * math.log10(PEAK ** 2 / x))


def mse(a, b, weights=None) -> float:
    a, b = _pair(a, b)
    w = _weights(weights, a.shape)
    return _weighted_mean(_channels((a - b) ** 2), w)


def psnr(a, b, weights=None) -> float:
    return _to_db(mse(a, b, weights))


def luma(x):
    """Rec.601 luma for RGB input; grayscale passes through."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 3:
        return x[..., 0] * 0.299 + x[..., 1] * 0.587 + x[..., 2] * 0.114
    if x.ndim == 3 and x.shape[2] == 1:
        return x[..., 0]
    if x.ndim == 2:
        return x
    raise GeometryError(f"cannot convert shape {x.shape} to luma")


def _window_sum(x, n):
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return s[n:, n:] - s[:-n, n:] - s[n:, :-n] + s[:-n, :-n]


def ssim_map(a, b, window=SSIM_WINDOW):
    """Local SSIM for every ``window`` x ``window`` patch (stride 1, uniform weights)."""
    x, y = luma(a), luma(b)
    if x.shape != y.shape:
        raise GeometryError(f"frame shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] < window or x.shape[1] < window:
        raise GeometryError(f"frames {x.shape} are smaller than the {window}x{window} SSIM window")
    n = float(window * window)
    # Center on the global mean so the integral images stay well conditioned.
    shift = 0.5 * (x.mean() + y.mean())
    xc, yc = x - shift, y - shift
    mx = _window_sum(xc, window) / n
    my = _window_sum(yc, window) / n
    vx = np.maximum(_window_sum(xc * xc, window) / n - mx * mx, 0.0)
    vy = np.maximum(_window_sum(yc * yc, window) / n - my * my, 0.0)
    cxy = _window_sum(xc * yc, window) / n - mx * my
    mx, my = mx + shift, my + shift
    num = (2 * mx * my + C1) * (2 * cxy + C2)
    den = (mx * mx + my * my + C1) * (vx + vy + C2)
    return num / den


def ssim(a, b, weights=None, window=SSIM_WINDOW) -> float:
    """Mean local SSIM on Rec.601 luma.

    With ``weights``, each window counts with the mean weight of its pixels.
    """
    a, b = _pair(a, b)
    w = _weights(weights, a.shape)
    m = ssim_map(a, b, window)
    if w is None:
        return float(m.mean())
    ww = _window_sum(w, window)
    if not np.any(ww != 0):
        raise GeometryError("no SSIM window overlaps the weight mask")
    return float((m * ww).sum() / ww.sum())


def gradient_magnitude(x):
    """|dx| + |dy| with forward differences; the last column/row gets 0."""
    x = _channels(np.asarray(x, dtype=np.float64))
    g = np.zeros_like(x)
    g[:, :-1] += np.abs(x[:, 1:] - x[:, :-1])
    g[:-1, :] += np.abs(x[1:, :] - x[:-1, :])
    return g


def gradient_difference(a, b, weights=None) -> float:
    a, b = _pair(a, b)
    w = _weights(weights, a.shape)
    return _weighted_mean(np.abs(gradient_magnitude(a) - gradient_magnitude(b)), w)


def sharp_diff(a, b, weights=None) -> float:
    return _to_db(gradient_difference(a, b, weights))


def frame_metrics(a, b, weights=None) -> dict:
    return {
        "mse": mse(a, b, weights),
        "psnr": psnr(a, b, weights),
        "ssim": ssim(a, b, weights),
        "sharp_diff": sharp_diff(a, b, weights),
    }


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-frame (or per-pair) metrics and their means.

    Frames whose weight mask is empty get ``None`` and are left out of the
    mean.
    """

    labels: list
    per_frame: dict = field(default_factory=dict)
    mean: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, labels, rows) -> "MetricReport":
        per_frame = {name: [None if r is None else r[name] for r in rows] for name in METRIC_NAMES}
        mean = {}
        for name, vals in per_frame.items():
            vals = [v for v in vals if v is not None]
            mean[name] = float(np.mean(vals)) if vals else None
        return cls(list(labels), per_frame, mean)

    def to_dict(self) -> dict:
        rows = []
        for i, label in enumerate(self.labels):
            row = {"label": label}
            row.update({name: self.per_frame[name][i] for name in METRIC_NAMES})
            rows.append(row)
        return {"rows": rows, "mean": self.mean, "count": len(self.labels)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        head = f"{'frame':>10} " + " ".join(f"{n:>12}" for n in METRIC_NAMES)
        lines = [head]

        def fmt(v):
            return f"{'-':>12}" if v is None else f"{v:12.6f}"

        for i, label in enumerate(self.labels):
            lines.append(f"{str(label):>10} " + " ".join(fmt(self.per_frame[n][i]) for n in METRIC_NAMES))
        lines.append(f"{'mean':>10} " + " ".join(fmt(self.mean[n]) for n in METRIC_NAMES))
        return "\n".join(lines)


def _frames(x):
    return x.data if isinstance(x, FrameSequence) else np.asarray(x)


def compare_sequences(a, b, weights=None) -> MetricReport:
    """Frame-by-frame metrics between two equally long sequences."""
    fa, fb = _frames(a), _frames(b)
    if fa.shape != fb.shape:
        raise GeometryError(f"sequence shapes differ: {fa.shape} vs {fb.shape}")
    ws = None if weights is None else _frames(weights)
    rows = []
    for t in range(len(fa)):
        w = None if ws is None else ws[t]
        if w is not None and not np.any(w != 0):
            rows.append(None)
            continue
        rows.append(frame_metrics(fa[t], fb[t], w))
    return MetricReport.from_rows(list(range(len(fa))), rows)


# --------------------------------------------------------------------------
# U-turn protocol
# --------------------------------------------------------------------------

def uturn_pairs(T: int) -> list[tuple[int, int]]:
    """Frame pairs sharing a location on an out-and-back path of ``T`` frames."""
    if T < 2 or T % 2:
        raise GeometryError(f"u-turn sequences need an even frame count, got {T}")
    return [(i, T - 1 - i) for i in range(T // 2)]


def direction_adjust(frame):
    """Rotate an equirectangular frame by 180 degrees of yaw (half-width column shift)."""
    frame = np.asarray(frame)
    W = frame.shape[1]
    if W % 2:
        raise GeometryError(f"direction adjustment needs an even width, got {W}")
    return np.roll(frame, W // 2, axis=1)


def self_consistency(frames, weights=None) -> MetricReport:
    """Metrics between each outbound frame and its direction-adjusted return frame."""
    fr = _frames(frames)
    ws = None if weights is None else _frames(weights)
    labels, rows = [], []
    for i, j in uturn_pairs(len(fr)):
        w = None
        if ws is not None:
            w = ws[i] * direction_adjust(ws[j])
            if not np.any(w != 0):
                labels.append(f"{i}-{j}")
                rows.append(None)
                continue
        labels.append(f"{i}-{j}")
        rows.append(frame_metrics(fr[i], direction_adjust(fr[j]), w))
    return MetricReport.from_rows(labels, rows)
