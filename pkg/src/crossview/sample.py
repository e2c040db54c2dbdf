"""Procedural sample scene: a north-south street lined with building blocks.

The footprint is 48 m x 48 m at 0.25 m cells, centered on the world origin,
with the street running along x = 0.
"""

from __future__ import annotations

import numpy as np

from .scene import ClassRegistry, SemanticHeightField, class_registry_default

SAMPLE_EXTENT = 48.0
SAMPLE_CELL = 0.25


def sample_origin(cells: int, cell_size: float) -> tuple[float, float]:
    """World (x, y) of cell (0, 0) for a footprint centered on (0, 0)."""
    half = cells * cell_size / 2.0
    return (-half + cell_size / 2.0, half - cell_size / 2.0)


def make_sample_scene(seed: int = 7, registry: ClassRegistry | None = None):
    """Build the sample height field and a matching satellite RGB raster.

    Returns:
        (SemanticHeightField, satellite uint8 raster of the same size)
    """
    registry = registry or class_registry_default()
    cid = registry.id_of
    n = int(round(SAMPLE_EXTENT / SAMPLE_CELL))
    origin = sample_origin(n, SAMPLE_CELL)
    xs = origin[0] + np.arange(n) * SAMPLE_CELL
    ys = origin[1] - np.arange(n) * SAMPLE_CELL
    X, Y = np.meshgrid(xs, ys)
    rng = np.random.default_rng(seed)

    sem = np.full((n, n), cid("terrain"), dtype=np.uint16)
    elev = np.zeros((n, n))

    road = np.abs(X) < 4.0
    cross = (np.abs(Y + 14.0) < 3.0) & ~road
    sidewalk = (np.abs(X) >= 4.0) & (np.abs(X) < 6.0) & ~cross
    sem[road | cross] = cid("road")
    sem[sidewalk] = cid("sidewalk")
    elev[sidewalk] = 0.15

    # Building blocks along both sides, split into lots of varying depth and height.
    lots = np.arange(-24.0, 24.0, 6.0)
    for side, name in ((-1, "building_left"), (1, "building_right")):
        for y0 in lots:
            if rng.random() < 0.15:
                continue
            setback = 6.5 + rng.random() * 2.0
            depth = 6.0 + rng.random() * 8.0
            height = float(np.round(4.0 + rng.random() * 12.0, 2))
            gap = 0.5 + rng.random()
            xin = (side * X >= setback) & (side * X < setback + depth)
            yin = (Y >= y0 + gap / 2) & (Y < y0 + 6.0 - gap / 2)
            block = xin & yin & ~cross
            sem[block] = cid(name)
            elev[block] = height

    # Trees in the free strip between sidewalk and buildings.
    for _ in range(10):
        cx = rng.choice([-1, 1]) * (6.0 + rng.random() * 0.5)
        cy = rng.uniform(-22.0, 22.0)
        if abs(cy + 14.0) < 4.0:
            continue
        crown = (X - cx) ** 2 + (Y - cy) ** 2 < 0.8 ** 2
        crown &= sem != cid("building_left")
        crown &= sem != cid("building_right")
        sem[crown] = cid("vegetation")
        elev[crown] = 5.0 + rng.random() * 2.0

    # Street furniture: a few poles on the sidewalks.
    for cy in (-20.0, -8.0, 4.0, 16.0):
        for cx in (-5.0, 5.0):
            pole = (np.abs(X - cx) < 0.2) & (np.abs(Y - cy) < 0.2)
            sem[pole] = cid("object")
            elev[pole] = 3.5

    field = SemanticHeightField(elev, sem, SAMPLE_CELL, origin)
    return field, satellite_image(field, registry, seed)


def satellite_image(field: SemanticHeightField, registry: ClassRegistry, seed: int = 0) -> np.ndarray:
    """Top-down color raster: class color, lit by height, with per-cell grain."""
    base = registry.palette()[field.semantics].astype(np.float64)
    shade = 0.75 + 0.25 * np.clip(field.elevation / 16.0, 0.0, 1.0)
    grain = np.random.default_rng(seed).uniform(0.92, 1.08, size=field.semantics.shape)
    return np.clip(base * (shade * grain)[..., None], 0, 255).astype(np.uint8)
