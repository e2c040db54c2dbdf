import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossview.exceptions import ConfigurationError, GeometryError
from crossview.scene import (
    ClassRegistry,
    PointCloud,
    PointPixelMap,
    SemanticHeightField,
    Trajectory,
    class_registry_default,
    direction_to_pixel,
    pixel_directions,
    ray_direction,
    world_conventions,
)

from .oracles import panorama_directions

sizes = st.tuples(st.integers(2, 40), st.integers(1, 40).map(lambda w: 2 * w))
headings = st.floats(-10.0, 10.0, allow_nan=False)


def rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def test_conventions_record():
    c = world_conventions()
    assert (c.x_axis, c.y_axis, c.z_axis) == ("east", "north", "up")
    assert c.heightfield_row0 == "northernmost"
    assert c.version >= 1


def test_center_column_faces_heading():
    # psi = 0 sits on the boundary between the two middle columns
    d = ray_direction(8, 8.0 - 0.5, 0.0, 16, 16)
    np.testing.assert_allclose(d, [0.0, math.cos(math.pi / 2 - math.pi * 8.5 / 16), d[2]], atol=1e-12)
    assert abs(d[0]) < 1e-12 and d[1] > 0


def test_bottom_edge_is_nadir():
    for heading in (0.0, 0.3, math.pi, -2.0):
        d = ray_direction(16 - 0.5, 3, heading, 16, 32)
        assert tuple(d) == (0.0, 0.0, -1.0)


def test_heading_quarter_turn_points_east():
    d = ray_direction(8 - 0.5, 8 - 0.5, math.pi / 2, 16, 16)
    # oracle: heading is a clockwise rotation of the north vector seen from above
    ref = rotation_z(-math.pi / 2) @ np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(d, ref, atol=1e-12)
    np.testing.assert_allclose(d, [1.0, 0.0, 0.0], atol=1e-12)


@given(sizes, headings)
def test_directions_match_rotation_oracle(size, heading):
    H, W = size
    got = pixel_directions(H, W, heading)
    ref = panorama_directions(H, W, heading)
    # headings within 1e-9 columns of the column grid snap onto it
    np.testing.assert_allclose(got, ref, atol=2 * math.pi * 1e-9 / W + 1e-12)
    np.testing.assert_allclose(np.linalg.norm(got, axis=-1), 1.0, atol=1e-12)


@given(sizes, headings)
def test_pixel_ray_pixel_round_trip(size, heading):
    H, W = size
    p, q = direction_to_pixel(pixel_directions(H, W, heading), H, W, heading)
    rows, cols = np.indices((H, W))
    np.testing.assert_array_equal(p, rows)
    np.testing.assert_array_equal(q, cols)


@given(st.integers(1, 64), st.integers(0, 127))
def test_column_grid_headings_are_exact_shifts(half_width, k):
    W = 2 * half_width
    k %= W
    base = pixel_directions(5, W, 0.0)
    turned = pixel_directions(5, W, 2 * math.pi * k / W)
    np.testing.assert_array_equal(turned, np.roll(base, -k, axis=1))


@given(headings)
def test_nadir_independent_of_heading(heading):
    assert tuple(ray_direction(9.5, 0.25, heading, 10, 20)) == (0.0, 0.0, -1.0)


def test_default_registry():
    reg = class_registry_default()
    assert len(reg) == 8
    assert "sky" in reg.names and "building_left" in reg.names and "building_right" in reg.names
    assert [c.id for c in reg.classes] == list(range(8))


def test_registry_override_and_errors():
    doc = {"classes": [{"id": 0, "name": "road", "rgb": [1, 2, 3]},
                       {"id": 1, "name": "building_left", "rgb": [4, 5, 6]},
                       {"id": 2, "name": "building_right", "rgb": [7, 8, 9]},
                       {"id": 3, "name": "sky", "rgb": [10, 11, 12]}]}
    import json
    reg = ClassRegistry.from_json(json.dumps(doc))
    assert len(reg) == 4 and reg.sky_id == 3
    assert ClassRegistry.from_json(reg.to_json()).names == reg.names
    no_sky = {"classes": doc["classes"][:3]}
    with pytest.raises(ConfigurationError):
        ClassRegistry.from_json(json.dumps(no_sky))
    dup = {"classes": doc["classes"] + [{"id": 4, "name": "road", "rgb": [0, 0, 0]}]}
    with pytest.raises(ConfigurationError):
        ClassRegistry.from_json(json.dumps(dup))
    gap = {"classes": [dict(c, id=c["id"] * 2) for c in doc["classes"]]}
    with pytest.raises(ConfigurationError):
        ClassRegistry.from_json(json.dumps(gap))


def test_height_field_validation():
    reg = class_registry_default()
    sem = np.zeros((3, 4), np.uint16)
    field = SemanticHeightField(np.zeros((3, 4)), sem, 0.5, (0.0, 0.0))
    field.validate(reg)
    with pytest.raises(GeometryError):
        SemanticHeightField(-np.ones((3, 4)), sem, 0.5, (0.0, 0.0))
    with pytest.raises(GeometryError):
        SemanticHeightField(np.full((3, 4), np.nan), sem, 0.5, (0.0, 0.0))
    sky = sem.copy()
    sky[1, 1] = reg.sky_id
    with pytest.raises(ConfigurationError):
        SemanticHeightField(np.zeros((3, 4)), sky, 0.5, (0.0, 0.0)).validate(reg)


def test_height_field_row_zero_is_north():
    field = SemanticHeightField(np.zeros((4, 3)), np.zeros((4, 3), np.uint16), 1.0, (10.0, 20.0))
    row, col, inside = field.cell_index(np.array([10.0, 12.0]), np.array([20.0, 17.0]))
    assert row.tolist() == [0, 3] and col.tolist() == [0, 2] and inside.all()
    assert field.bounds == (9.5, 12.5, 16.5, 20.5)


def test_straight_trajectory_defaults():
    traj = Trajectory.straight((1.0, 2.0))
    assert len(traj) == 15 and traj.center_index == 7
    np.testing.assert_allclose(traj.locations[:, 0], 1.0)
    np.testing.assert_allclose(np.diff(traj.locations[:, 1]), 0.5)
    assert traj.locations[-1, 1] - traj.locations[0, 1] == pytest.approx(7.0)
    assert traj.camera_height == 3.0


@given(st.integers(1, 40).map(lambda n: 2 * n), headings)
def test_uturn_pairs_share_locations(T, heading):
    traj = Trajectory.uturn((0.0, 0.0), heading, T)
    for i in range(T // 2):
        j = T - 1 - i
        assert np.array_equal(traj.locations[i], traj.locations[j])
        diff = (traj.headings[j] - traj.headings[i]) % (2 * math.pi)
        assert diff == pytest.approx(math.pi, abs=1e-12)


def test_trajectory_errors():
    with pytest.raises(GeometryError):
        Trajectory(np.zeros((0, 2)), [], 3.0)
    with pytest.raises(GeometryError):
        Trajectory(np.zeros((2, 2)), [0, 0], 3.0, center_index=2)
    with pytest.raises(ConfigurationError):
        Trajectory.straight((0, 0), range_m=7.0, step_m=0.4)
    field = SemanticHeightField(np.zeros((4, 4)), np.zeros((4, 4), np.uint16), 1.0, (0.0, 0.0))
    with pytest.raises(GeometryError):
        Trajectory.straight((0.0, 0.0)).check_inside(field)


def test_point_cloud_append_is_stable():
    a = PointCloud(np.zeros((2, 3)), [1, 2])
    b = PointCloud(np.ones((3, 3)), [3, 4, 5])
    c = a.append(b)
    assert c.semantics.tolist() == [1, 2, 3, 4, 5]
    np.testing.assert_array_equal(c.positions[:2], a.positions)
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((2, 3)), [1])
    with pytest.raises(ValueError):
        c.positions[0, 0] = 5.0


def test_point_pixel_map_completeness():
    m = PointPixelMap(np.array([[[1, 2], [2, 1]]], dtype=np.uint32))
    m.check_complete(2)
    with pytest.raises(Exception):
        m.check_complete(1)
    with pytest.raises(Exception):
        PointPixelMap(np.array([[[0, 1]]], dtype=np.uint32)).check_complete(1)
