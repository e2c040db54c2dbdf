import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossview.exceptions import ConfigurationError, GeometryError
from crossview.scene import FrameSequence, PointCloud, class_registry_default
from crossview.stylize import (
    LatentSet,
    attentive_pool,
    brightness,
    class_masks,
    stylize_points,
    upsample2x,
)


def test_attentive_pool_is_masked_mean():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(6, 8, 5))
    sem = rng.integers(0, 3, size=(6, 8))
    latents = attentive_pool(F, class_masks(sem))
    for c in range(3):
        ref = F[sem == c].mean(axis=0)
        np.testing.assert_allclose(latents[c], ref, rtol=1e-12)
    assert LatentSet.from_json(latents.to_json()).vectors.keys() == latents.vectors.keys()
    assert json.loads(latents.to_json())["0"] == pytest.approx(list(latents[0]))


def test_attentive_pool_soft_masks_and_errors():
    F = np.ones((2, 2, 3))
    F[0, 0] = 5.0
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(attentive_pool(F, {4: w})[4], [3.0, 3.0, 3.0])
    with pytest.raises(GeometryError):
        attentive_pool(F, {1: np.zeros((2, 2))})
    with pytest.raises(GeometryError):
        attentive_pool(F, {1: np.ones((3, 2))})


@given(arrays(np.float64, st.tuples(st.integers(1, 50), st.just(3)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)), st.integers(0, 2**32))
def test_brightness_range_and_determinism(pos, seed):
    cls = np.arange(len(pos)) % 8
    f = brightness(pos, cls, seed)
    assert np.all((f >= 0.8) & (f < 1.2))
    np.testing.assert_array_equal(f, brightness(pos.copy(), cls, seed))


def test_stylize_points_depends_on_point_identity_only():
    reg = class_registry_default()
    pos = np.random.default_rng(1).normal(size=(100, 3))
    cloud = PointCloud(pos, np.arange(100) % 8)
    a = stylize_points(cloud, reg, seed=3)
    b = stylize_points(PointCloud(pos[::-1], (np.arange(100) % 8)[::-1]), reg, seed=3)
    np.testing.assert_array_equal(a, b[::-1])
    assert not np.array_equal(a, stylize_points(cloud, reg, seed=4))
    flat = stylize_points(cloud, reg, modulate=False)
    np.testing.assert_array_equal(flat, reg.palette()[cloud.semantics])
    with pytest.raises(ConfigurationError):
        stylize_points(PointCloud(pos[:1], [99]), reg)


def test_upsample_shapes_and_constants():
    x = np.full((2, 3, 5, 3), 77, np.uint8)
    y = upsample2x(x)
    assert y.shape == (2, 6, 10, 3) and y.dtype == np.uint8 and np.all(y == 77)
    seq = upsample2x(FrameSequence(np.zeros((1, 2, 2)), "class"))
    assert seq.data.shape == (1, 4, 4)


def test_upsample_round_trip_smooth():
    yy, xx = np.mgrid[0:16, 0:32]
    img = (100 + 40 * np.sin(xx / 6.0) + 30 * np.cos(yy / 5.0)).astype(np.uint8)[None, :, :, None].repeat(3, -1)
    up = upsample2x(img).astype(float)
    down = 0.25 * (up[:, ::2, ::2] + up[:, 1::2, ::2] + up[:, ::2, 1::2] + up[:, 1::2, 1::2])
    assert np.abs(down - img).max() <= 1.0 + 1e-9


def test_upsample_interpolates_half_pixel():
    x = np.array([[[0.0, 4.0]]])
    np.testing.assert_allclose(upsample2x(x)[0, 0], [0.0, 1.0, 3.0, 4.0])
