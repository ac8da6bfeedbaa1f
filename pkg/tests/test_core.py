import numpy as np
import pytest
import torch

from fdct.core import (
    ConfigError,
    DepthMap,
    RgbImage,
    Sample,
    ShapeError,
    TransparentMask,
    ValidRange,
    normalize_depth,
    normals_from_depth,
    valid_pixels,
)
from oracles import normals_ref, valid_ref


def test_depth_map_rejects_non_finite():
    with pytest.raises(ValueError):
        DepthMap(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        DepthMap(np.zeros((4, 4, 3)))


def test_rgb_image_bounds():
    with pytest.raises(ValueError):
        RgbImage(np.full((4, 4, 3), 1.5))
    with pytest.raises(ShapeError):
        RgbImage(np.zeros((4, 4)))


def test_sample_requires_matching_sizes():
    rgb = RgbImage(np.zeros((4, 4, 3)))
    d = DepthMap(np.ones((4, 4)))
    m = TransparentMask(np.ones((4, 4), dtype=bool))
    Sample(rgb, d, d, m, id="ok")
    with pytest.raises(ShapeError):
        Sample(rgb, d, DepthMap(np.ones((4, 8))), m, id="bad")


def test_valid_range_ordering():
    with pytest.raises(ConfigError):
        ValidRange(lo=1.5, hi=0.3)
    with pytest.raises(ConfigError):
        ValidRange(lo=0.0, hi=1.0)


def test_valid_pixels_all_in_range():
    gt = np.full((4, 4), 1.0)
    mask = np.ones((4, 4), dtype=bool)
    assert valid_pixels(gt, mask).all()


def test_valid_pixels_all_above_hi():
    gt = np.full((4, 4), 2.0)
    mask = np.ones((4, 4), dtype=bool)
    assert not valid_pixels(gt, mask).any()


def test_valid_pixels_matches_loop_oracle():
    gt = np.tile(np.array([[0.1, 0.5], [1.0, 1.6]]), (2, 2))
    mask = np.indices((4, 4)).sum(axis=0) % 2 == 0
    got = valid_pixels(gt, mask)
    assert np.array_equal(got, valid_ref(gt, mask))


def test_valid_pixels_shape_mismatch():
    with pytest.raises(ShapeError):
        valid_pixels(np.ones((4, 4)), np.ones((4, 5), dtype=bool))


def test_valid_pixels_monotone_in_mask():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gt = rng.uniform(0.0, 2.0, size=(8, 8))
        mask = rng.random((8, 8)) < 0.6
        smaller = mask & (rng.random((8, 8)) < 0.5)
        v_big = valid_pixels(gt, mask)
        v_small = valid_pixels(gt, smaller)
        assert not (v_small & ~v_big).any()


def test_valid_pixels_torch_backend():
    gt = torch.tensor([[0.5, 2.0], [1.0, 0.1]])
    mask = torch.ones(2, 2, dtype=torch.bool)
    got = valid_pixels(gt, mask)
    assert got.tolist() == [[True, False], [True, False]]


def test_normalize_depth_examples():
    assert normalize_depth(np.array([[1.0]]), 10.0)[0, 0] == pytest.approx(0.1)
    assert normalize_depth(np.array([[0.0]]), 10.0)[0, 0] == 0.0
    assert normalize_depth(np.array([[12.0]]), 10.0)[0, 0] == 1.0


def test_normalize_depth_idempotent_at_unit_max():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.0, 1.0, size=(8, 8))
    once = normalize_depth(d, 1.0)
    assert np.array_equal(normalize_depth(once, 1.0), once)


def test_normalize_depth_rejects_bad_max():
    with pytest.raises(ConfigError):
        normalize_depth(np.ones((2, 2)), 0.0)


def test_normals_constant_plane():
    n = normals_from_depth(np.full((6, 6), 1.3))
    assert np.allclose(n, np.array([0.0, 0.0, 1.0]))


def test_normals_unit_ramp():
    x = np.arange(8, dtype=float)
    d = np.tile(x, (8, 1))
    n = normals_from_depth(d)
    expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0)
    assert np.allclose(n, expected, atol=1e-12)


def test_normals_match_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(5):
        d = rng.uniform(0.4, 1.4, size=(8, 8))
        got = normals_from_depth(d)
        assert np.allclose(got, normals_ref(d), atol=1e-9)


def test_normals_unit_norm_everywhere():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.0, 3.0, size=(16, 16))
    n = normals_from_depth(d)
    assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-9)


def test_normals_torch_matches_numpy():
    rng = np.random.default_rng(11)
    d = rng.uniform(0.4, 1.4, size=(8, 8))
    got_t = normals_from_depth(torch.from_numpy(d)).numpy()
    got_n = normals_from_depth(d)
    assert np.allclose(got_t, got_n, atol=1e-12)


def test_normals_batched_tensor():
    d = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    n = normals_from_depth(d)
    assert n.shape == (2, 1, 8, 8, 3)
    single = normals_from_depth(d[1, 0])
    assert torch.allclose(n[1, 0], single)


def test_ops_are_pure():
    rng = np.random.default_rng(5)
    d = rng.uniform(0.0, 2.0, size=(8, 8))
    assert np.array_equal(normals_from_depth(d), normals_from_depth(d))
    assert np.array_equal(normalize_depth(d, 10.0), normalize_depth(d, 10.0))


def test_wrapper_types_accepted_by_ops():
    gt = DepthMap(np.full((4, 4), 1.0))
    mask = TransparentMask(np.ones((4, 4), dtype=bool))
    assert valid_pixels(gt, mask).all()
    assert normalize_depth(gt, 10.0).max() == pytest.approx(0.1)
    assert normals_from_depth(gt).shape == (4, 4, 3)
