import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossview.exceptions import GeometryError
from crossview.scene import PointCloud, SemanticHeightField, class_registry_default
from crossview.voxelizer import (
    FeatureVoxelizer,
    VoxelGrid,
    build_occupancy,
    devoxelize,
    expected_occupied_count,
    gather_point_semantics,
    voxelize_features,
)

from .oracles import group_means


def _field(elev, sem=None, cell=0.5, origin=(0.0, 0.0)):
    elev = np.asarray(elev, dtype=float)
    sem = np.zeros(elev.shape, np.uint16) if sem is None else np.asarray(sem, np.uint16)
    return SemanticHeightField(elev, sem, cell, origin)


def test_flat_field_has_only_ground_layer():
    field = _field(np.zeros((5, 7)), np.arange(35).reshape(5, 7) % 7)
    grid = build_occupancy(field, 0.25)
    assert len(grid) == 35
    assert grid.dims[2] == 1 and np.all(grid.coords[:, 2] == 0)
    # row 0 is north: it lands at the top of the grid's y axis
    dense = grid.dense
    assert dense[0, 4, 0] - 1 == field.semantics[0, 0]
    assert dense[6, 0, 0] - 1 == field.semantics[4, 6]


def test_single_tower_column():
    elev = np.zeros((3, 3))
    elev[1, 1] = 1.0
    sem = np.zeros((3, 3))
    sem[1, 1] = 2
    grid = build_occupancy(_field(elev, sem), 0.25)
    col = grid.dense[1, 1]
    assert np.all(col[:5] == 3) and len(col) == 5
    assert len(grid) == 9 + 4


def test_max_height_error_lists_cells():
    elev = np.zeros((3, 3))
    elev[2, 1] = 5.0
    with pytest.raises(GeometryError, match=r"\(2,1\)"):
        build_occupancy(_field(elev), 0.25, max_height=4.0)


def test_horizontal_voxel_must_not_exceed_cell():
    with pytest.raises(GeometryError):
        build_occupancy(_field(np.zeros((2, 2)), cell=0.5), 0.25, horizontal_voxel=1.0)
    grid = build_occupancy(_field(np.ones((2, 2)), cell=0.5), 0.25, horizontal_voxel=0.25)
    assert grid.dims[:2] == (4, 4) and grid.voxel_size == (0.25, 0.25, 0.25)


heights = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                 elements=st.floats(0, 6, allow_nan=False))


@given(heights, st.sampled_from([0.1, 0.25, 0.5, 1.0]))
def test_extrusion_matches_per_cell_loop(elev, dz):
    field = _field(elev, np.arange(elev.size).reshape(elev.shape) % 7)
    grid = build_occupancy(field, dz)
    assert len(grid) == expected_occupied_count(field, dz)
    dense = grid.dense
    rows, cols = elev.shape
    for r in range(rows):
        for c in range(cols):
            # voxel iz covers [(iz-1)dz, iz dz]; occupied iff it starts below the cell top
            n_above = sum(1 for iz in range(1, dense.shape[2]) if (iz - 1) * dz < elev[r, c] - 1e-9 * dz)
            column = dense[c, rows - 1 - r]
            assert np.count_nonzero(column) == 1 + n_above
            assert np.all(column[: 1 + n_above] == field.semantics[r, c] + 1)
            assert np.all(column[1 + n_above:] == 0)


def test_grid_invariants():
    with pytest.raises(GeometryError):
        VoxelGrid((2, 2, 2), 1.0, (0, 0, 0), [[0, 0, 2]], [0])
    with pytest.raises(GeometryError):
        VoxelGrid((2, 2, 2), 1.0, (0, 0, 0), [[0, 0, 1], [0, 0, 1]], [0, 1])


points = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)),
                elements=st.floats(-0.2, 0.2, allow_nan=False))


@given(points, st.integers(1, 4))
def test_voxel_means_match_groupby(pos, channels):
    feats = np.arange(len(pos) * channels, dtype=float).reshape(len(pos), channels) ** 1.5
    vox = voxelize_features(PointCloud(pos, features=feats), 0.03125)
    ref = group_means(np.floor(pos / 0.03125).astype(int), feats)
    assert len(vox) == len(ref)
    for key, row in zip(map(tuple, vox.keys.tolist()), vox.features):
        np.testing.assert_allclose(row, ref[key], rtol=1e-12, atol=1e-12)
    # every point belongs to exactly one voxel, the one containing it
    np.testing.assert_array_equal(vox.keys[vox.assignment], np.floor(pos / 0.03125).astype(int))


@given(points)
def test_devoxelize_shares_features_within_voxel(pos):
    feats = np.random.default_rng(0).normal(size=(len(pos), 3))
    cloud = PointCloud(pos, features=feats)
    vox = voxelize_features(cloud)
    back = devoxelize(vox, cloud)
    keys = np.floor(pos / 0.03125).astype(int)
    for k in np.unique(keys, axis=0):
        same = np.all(keys == k, axis=1)
        assert np.all(back[same] == back[same][0])


def test_voxelize_constant_group_is_exact():
    pos = np.full((7, 3), 0.01)
    feats = np.full((7, 2), 0.1)
    vox = voxelize_features(PointCloud(pos, features=feats))
    assert np.all(vox.features == 0.1)


def test_devoxelize_outside_raises():
    cloud = PointCloud(np.zeros((1, 3)), features=np.ones((1, 2)))
    vox = voxelize_features(cloud)
    with pytest.raises(GeometryError):
        devoxelize(vox, PointCloud(np.ones((1, 3))))


def test_feature_voxelizer_estimator_api():
    est = FeatureVoxelizer(voxel_size=0.5)
    assert est.get_params() == {"voxel_size": 0.5}
    X = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.9, 0.1, 0.1]])
    f = np.array([[1.0], [3.0], [5.0]])
    means = est.fit(X).transform(f)
    np.testing.assert_allclose(means, [[2.0], [5.0]])
    np.testing.assert_allclose(est.inverse_transform(means), [[2.0], [2.0], [5.0]])


def test_gather_point_semantics():
    reg = class_registry_default()
    sem = np.array([[1, 2], [3, 4]])
    field = _field(np.zeros((2, 2)), sem, cell=1.0, origin=(0.0, 1.0))
    pts = np.array([[0.1, 1.2, 0.0], [1.2, 0.1, 3.0], [50.0, 50.0, 100.0]])
    cloud = PointCloud(pts, sky=[False, False, True])
    assert gather_point_semantics(cloud, field, registry=reg).tolist() == [1, 4, reg.sky_id]
    with pytest.raises(GeometryError):
        gather_point_semantics(PointCloud(pts), field, registry=reg)


def test_feature_voxel_default_size():
    assert FeatureVoxelizer().voxel_size == 0.03125 == 1 / 32
    assert math.isclose(1 / FeatureVoxelizer().voxel_size, 32)
