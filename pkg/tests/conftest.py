from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

warnings.filterwarnings("ignore", module="numba")

from crossview.voxelizer import VoxelGrid  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SKY_CLASS = 7

# Acceptance results, printed as one line per criterion at the end of the run.
_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    _CRITERIA[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def random_grid(rng, n=32, density=0.02, voxel_size=None, n_classes=7):
    """Random occupancy: a solid floor layer plus scattered blocks."""
    dense = np.zeros((n, n, n), dtype=np.int16)
    labels = rng.integers(0, n_classes, size=(n, n, n)) + 1
    dense[:, :, 0] = labels[:, :, 0]
    blobs = rng.random((n, n, n)) < density
    dense[blobs] = labels[blobs]
    # a few pillars so rays hit tall structure too
    for _ in range(int(rng.integers(2, 6))):
        x, y = rng.integers(0, n, size=2)
        h = int(rng.integers(2, n))
        dense[x, y, :h] = labels[x, y, 0]
    if voxel_size is None:
        voxel_size = (0.5, 0.5, 0.5)
    origin = tuple(rng.uniform(-4, 4, size=2)) + (0.0,)
    return VoxelGrid.from_dense(dense, voxel_size, origin)


def free_points(rng, grid, count, z_min_voxel=1, margin=0.05):
    """Uniform points inside free voxels of ``grid`` (away from voxel faces)."""
    dense = grid.dense
    free = np.argwhere(dense == 0)
    free = free[free[:, 2] >= z_min_voxel]
    pick = free[rng.integers(0, len(free), size=count)]
    frac = rng.uniform(margin, 1 - margin, size=(count, 3))
    return np.asarray(grid.origin) + (pick + frac) * np.asarray(grid.voxel_size)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
