import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossview.exceptions import FormatError
from crossview.formats import (
    load_extraction,
    mapping_from_bytes,
    mapping_to_bytes,
    pfm_from_bytes,
    pfm_to_bytes,
    point_cloud_from_bytes,
    point_cloud_to_bytes,
    read_mask_png,
    read_palette_png,
    read_rgb_png,
    save_extraction,
    voxel_grid_from_bytes,
    voxel_grid_to_bytes,
    write_mask_png,
    write_palette_png,
    write_rgb_png,
)
from crossview.scene import PointCloud, PointPixelMap, class_registry_default
from crossview.voxelizer import VoxelGrid


def test_cvgx_layout_byte_for_byte():
    grid = VoxelGrid((4, 5, 6), 0.25, (1.0, 2.0, -0.25), [[3, 4, 5], [0, 0, 0]], [7, 2])
    data = voxel_grid_to_bytes(grid)
    expected = (b"CVGX" + struct.pack("<I3Id3dQ", 1, 4, 5, 6, 0.25, 1.0, 2.0, -0.25, 2)
                + struct.pack("<3IH", 0, 0, 0, 2) + struct.pack("<3IH", 3, 4, 5, 7))
    assert data == expected
    back = voxel_grid_from_bytes(data)
    assert back.dims == grid.dims and back.voxel_size == grid.voxel_size and back.origin == grid.origin
    np.testing.assert_array_equal(back.coords, grid.coords)
    np.testing.assert_array_equal(back.classes, grid.classes)


def test_cvgx_anisotropic_round_trip_and_errors():
    grid = VoxelGrid((2, 2, 3), (0.5, 0.5, 0.25), (0.0, 0.0, 0.0), [[1, 1, 2]], [3])
    back = voxel_grid_from_bytes(voxel_grid_to_bytes(grid))
    assert back.voxel_size == (0.5, 0.5, 0.25)
    with pytest.raises(FormatError):
        voxel_grid_from_bytes(b"XXXX" + bytes(40))
    with pytest.raises(FormatError):
        voxel_grid_from_bytes(voxel_grid_to_bytes(grid)[:-1])


@given(arrays(np.uint32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))))
def test_cvpm_round_trip(idx):
    data = mapping_to_bytes(PointPixelMap(idx))
    assert data[:4] == b"CVPM" and struct.unpack_from("<4I", data, 4) == (1, *idx.shape)
    np.testing.assert_array_equal(mapping_from_bytes(data).indices, idx)
    with pytest.raises(FormatError):
        mapping_from_bytes(data[:-1])


@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(3)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)), st.booleans())
def test_ply_round_trip(pos, with_rgb):
    n = len(pos)
    rgb = (np.arange(3 * n).reshape(n, 3) % 256).astype(np.uint8) if with_rgb else None
    cloud = PointCloud(pos, np.arange(n) % 9, np.arange(n) % 2 == 0, rgb)
    data = point_cloud_to_bytes(cloud)
    header = data[: data.index(b"end_header\n")].decode()
    assert "format binary_little_endian 1.0" in header
    assert "property double x" in header and "property ushort class" in header
    assert "property uchar sky" in header
    back = point_cloud_from_bytes(data)
    np.testing.assert_array_equal(back.positions, cloud.positions)
    np.testing.assert_array_equal(back.semantics, cloud.semantics)
    np.testing.assert_array_equal(back.sky, cloud.sky)
    if with_rgb:
        np.testing.assert_array_equal(back.rgb, rgb)


def test_ply_rejects_ascii():
    with pytest.raises(FormatError):
        point_cloud_from_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(0.125, 1e4, width=32)))
def test_pfm_round_trip(img):
    data = pfm_to_bytes(img)
    assert data.startswith(b"Pf\n") and b"\n-1.0\n" in data
    np.testing.assert_array_equal(pfm_from_bytes(data), img.astype(np.float64))


def test_pfm_rows_stored_bottom_up():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    body = pfm_to_bytes(img).split(b"-1.0\n", 1)[1]
    assert np.frombuffer(body, "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_png_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    write_rgb_png(tmp_path / "a.png", rgb)
    np.testing.assert_array_equal(read_rgb_png(tmp_path / "a.png"), rgb)
    reg = class_registry_default()
    labels = rng.integers(0, 8, size=(5, 7))
    write_palette_png(tmp_path / "s.png", labels, reg)
    np.testing.assert_array_equal(read_palette_png(tmp_path / "s.png"), labels)
    mask = rng.random((5, 7)) < 0.5
    write_mask_png(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), mask)
    with pytest.raises(FormatError):
        read_palette_png(tmp_path / "a.png")


def test_extraction_bundle_round_trip(tmp_path):
    from crossview.extraction import extract
    from crossview.scene import Trajectory

    dense = np.ones((6, 6, 1), np.int16)
    grid = VoxelGrid.from_dense(dense, 1.0, (-3.0, -3.0, -1.0))
    traj = Trajectory([[0.1, 0.1], [0.1, 0.6]], [0.2, 0.2], 1.5)
    res = extract(grid, traj, 8, 16)
    save_extraction(tmp_path, res, traj)
    back, traj2 = load_extraction(tmp_path)
    np.testing.assert_array_equal(back.mapping.indices, res.mapping.indices)
    np.testing.assert_array_equal(back.cloud.positions, res.cloud.positions)
    np.testing.assert_array_equal(traj2.locations, traj.locations)
    np.testing.assert_array_equal(traj2.headings, traj.headings)
