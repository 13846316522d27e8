import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srseg.data import DegradationSpec
from srseg.resample import (bicubic_downsample, bicubic_upsample, cubic_kernel,
                            resample, resample_matrix, quantize_u8)


# ---------------------------------------------------------------------------
# independent oracle: direct per-site kernel evaluation, scalar loops, written
# from the definition rather than from the matrix builder

def _cubic(x, a=-0.5):
    ax = abs(x)
    if ax <= 1.0:
        return (a + 2.0) * ax ** 3 - (a + 3.0) * ax ** 2 + 1.0
    if ax < 2.0:
        return a * ax ** 3 - 5.0 * a * ax ** 2 + 8.0 * a * ax - 4.0 * a
    return 0.0


def oracle_1d(signal, n_out, antialias=True):
    n_in = len(signal)
    scale = n_out / n_in
    k = scale if (antialias and scale < 1.0) else 1.0
    out = []
    for j in range(n_out):
        center = (j + 0.5) / scale - 0.5
        lo = math.floor(center - 2.0 / k) - 2
        hi = math.ceil(center + 2.0 / k) + 2
        acc = wsum = 0.0
        for i in range(lo, hi + 1):
            w = _cubic((center - i) * k) * k
            acc += w * signal[min(max(i, 0), n_in - 1)]
            wsum += w
        out.append(acc / wsum)
    return np.array(out)


def oracle_2d(image, out_h, out_w, antialias=True):
    rows = np.stack([oracle_1d(image[:, c], out_h, antialias)
                     for c in range(image.shape[1])], axis=1)
    return np.stack([oracle_1d(rows[r, :], out_w, antialias)
                     for r in range(out_h)], axis=0)


# ---------------------------------------------------------------------------

def test_kernel_values():
    assert cubic_kernel(np.array([0.0]))[0] == 1.0
    assert cubic_kernel(np.array([1.0]))[0] == 0.0
    assert cubic_kernel(np.array([2.0]))[0] == 0.0
    assert cubic_kernel(np.array([2.5]))[0] == 0.0
    # symmetric
    xs = np.linspace(-2, 2, 41)
    assert np.allclose(cubic_kernel(xs), cubic_kernel(-xs))


def test_matrix_rows_normalized():
    for n_in, n_out in [(16, 4), (16, 8), (12, 24), (8, 8), (480, 60)]:
        m = resample_matrix(n_in, n_out)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("factor", [2, 4, 8])
def test_constant_preserved(rng, factor):
    for _ in range(20):
        value = rng.uniform(0.0, 255.0)
        size = factor * int(rng.integers(2, 7))
        img = np.full((size, size, 3), value)
        out = bicubic_downsample(img, DegradationSpec(factor))
        assert out.shape == (size // factor, size // factor, 3)
        assert np.allclose(out, value, atol=1e-9)


@pytest.mark.parametrize("factor", [2, 4, 8])
def test_linearity_before_clamp(rng, factor):
    spec = DegradationSpec(factor)
    size = factor * 6
    a = rng.uniform(0.0, 120.0, (size, size, 3))
    b = rng.uniform(0.0, 120.0, (size, size, 3))
    da = bicubic_downsample(a, spec, clamp=False)
    db = bicubic_downsample(b, spec, clamp=False)
    dsum = bicubic_downsample(a + b, spec, clamp=False)
    assert np.allclose(dsum, da + db, atol=1e-9)
    dscaled = bicubic_downsample(1.9 * a, spec, clamp=False)
    assert np.allclose(dscaled, 1.9 * da, atol=1e-9)


def test_step_image_matches_oracle():
    img = np.zeros((8, 8, 3))
    img[:, 4:, :] = 200.0
    out = bicubic_downsample(img, DegradationSpec(2), clamp=False)
    want = oracle_2d(img[:, :, 0], 4, 4)
    for c in range(3):
        assert np.allclose(out[:, :, c], want, atol=1e-6)


@pytest.mark.parametrize("factor", [2, 4, 8])
def test_random_images_match_oracle(rng, factor):
    size = factor * 4
    for _ in range(5):
        img = rng.uniform(0.0, 255.0, (size, size))
        out = resample(img, size // factor, size // factor, clamp=False)
        want = oracle_2d(img, size // factor, size // factor)
        assert np.allclose(out, want, atol=1e-9)


def test_upsample_matches_oracle(rng):
    img = rng.uniform(0.0, 255.0, (6, 6))
    out = resample(img, 24, 24, antialias=False, clamp=False)
    want = oracle_2d(img, 24, 24, antialias=False)
    assert np.allclose(out, want, atol=1e-9)


def test_upsample_shape_and_range(rng):
    img = rng.uniform(0.0, 255.0, (12, 12, 3))
    up = bicubic_upsample(img, 4)
    assert up.shape == (48, 48, 3)
    assert up.min() >= 0.0 and up.max() <= 255.0


def test_downsample_rejects_indivisible():
    with pytest.raises(ValueError):
        bicubic_downsample(np.zeros((10, 10, 3)), DegradationSpec(4))


def test_antialias_flag_changes_downsample(rng):
    img = rng.uniform(0.0, 255.0, (32, 32, 3))
    a = bicubic_downsample(img, DegradationSpec(4, antialias=True), clamp=False)
    b = bicubic_downsample(img, DegradationSpec(4, antialias=False), clamp=False)
    assert not np.allclose(a, b)


def test_quantize_rounds_half_away_from_zero():
    arr = np.array([[0.5, 1.5, 2.5, 254.5, 255.4, -3.0]])
    out = quantize_u8(arr)
    assert out.dtype == np.uint8
    assert out.tolist() == [[1, 2, 3, 255, 255, 0]]


@settings(max_examples=30, deadline=None)
@given(value=st.floats(0.0, 255.0, allow_nan=False),
       blocks=st.integers(2, 5), factor=st.sampled_from([2, 4, 8]))
def test_constant_preservation_property(value, blocks, factor):
    img = np.full((blocks * factor, blocks * factor), value)
    out = resample(img, blocks, blocks)
    assert np.allclose(out, value, atol=1e-9)
