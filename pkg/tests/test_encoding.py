import numpy as np
import pytest

from tacnn.encoding import (
    NORM_EPS,
    PatchGeometry,
    channel_stats,
    encode_pixel,
    extract_patch,
    normalize_backward,
    normalize_channel,
    scatter_columns,
    window_columns,
    windows,
)
from tacnn.errors import BoundsError, DimensionError, EncodingError
from tacnn.oracle import finite_diff


def test_encode_pixel():
    assert encode_pixel(0.25) == (0.25, 0.75)
    assert encode_pixel(0.0) == (0.0, 1.0)
    for bad in (-0.01, 1.01, float("nan")):
        with pytest.raises(EncodingError):
            encode_pixel(bad)


def test_geometry_shapes():
    assert PatchGeometry(3, 1, 28, 28).output_shape == (26, 26)
    assert PatchGeometry(3, 1, 26, 26).output_shape == (24, 24)
    assert PatchGeometry(3, 2, 28, 28).output_shape == (13, 13)
    with pytest.raises(DimensionError):
        PatchGeometry(5, 1, 4, 4)


def test_extract_patch_row_major():
    plane = np.arange(36, dtype=float).reshape(6, 6) / 35
    geo = PatchGeometry(3, 1, 6, 6)
    patch = extract_patch(plane, (1, 2), geo)
    np.testing.assert_allclose(patch.locals[:, 0], plane[1:4, 2:5].ravel())
    with pytest.raises(BoundsError):
        extract_patch(plane, (4, 0), geo)
    with pytest.raises(DimensionError):
        extract_patch(plane[:5], (0, 0), geo)


def test_window_layouts_agree(rng):
    planes = rng.random((2, 7, 8))
    for stride in (1, 2):
        rows = windows(planes, 3, stride)
        cols = window_columns(planes, 3, stride)
        np.testing.assert_array_equal(cols, rows.reshape(-1, 9).T)


def test_scatter_is_adjoint_of_gather(rng):
    planes = rng.random((2, 7, 8))
    cols = window_columns(planes, 3, 2)
    other = rng.standard_normal(cols.shape)
    back = scatter_columns(other.reshape(9, 2, 3, 3), 3, 2, 7, 8)
    assert np.sum(cols * other) == pytest.approx(np.sum(planes * back), rel=1e-12)


def test_normalize_two_valued_plane():
    raw = np.array([[-1.0, 1.0], [1.0, -1.0]])
    z = normalize_channel(raw)
    lo = 1 / (1 + np.exp(1 / (1 + NORM_EPS)))
    np.testing.assert_allclose(z, [[lo, 1 - lo], [1 - lo, lo]], atol=1e-12)
    assert lo == pytest.approx(0.2689, abs=1e-4)


def test_normalize_constant_plane_is_half():
    np.testing.assert_allclose(normalize_channel(np.full((4, 4), 3.3)), 0.5, atol=1e-12)


def test_normalize_shift_and_scale_invariant(rng):
    raw = rng.standard_normal((5, 5))
    base = normalize_channel(raw)
    np.testing.assert_allclose(normalize_channel(raw + 17.0), base, atol=1e-9)
    np.testing.assert_allclose(normalize_channel(raw * 40.0), base, atol=1e-9)


def test_normalize_per_sample_per_channel(rng):
    raw = rng.standard_normal((2, 3, 4, 4))
    raw[1, 2] *= 100
    z = normalize_channel(raw)
    for b in range(2):
        for c in range(3):
            np.testing.assert_allclose(z[b, c], normalize_channel(raw[b, c]), atol=1e-15)


def test_normalize_strictly_inside_unit_interval(rng):
    raw = rng.standard_normal((200, 6, 6)) * 1e3
    z = normalize_channel(raw)
    assert np.all((z > 0) & (z < 1))


def test_channel_stats_population_std():
    stats = channel_stats(np.array([[1.0, 3.0]]))
    assert (stats.mean, stats.std) == (2.0, 1.0)


def test_normalize_backward_matches_finite_differences(rng):
    raw = rng.standard_normal((2, 4, 4)) * 2 + 1
    up = rng.standard_normal(raw.shape)
    (numeric,) = finite_diff(lambda: float((normalize_channel(raw) * up).sum()), [raw])
    np.testing.assert_allclose(normalize_backward(raw, up), numeric, atol=1e-8)


def test_normalize_backward_constant_plane_is_finite():
    g = normalize_backward(np.zeros((3, 3)), np.ones((3, 3)))
    assert np.all(np.isfinite(g))
