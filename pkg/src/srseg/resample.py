"""Bicubic resampling used by the degradation pipeline.

Follows the convention of mainstream resamplers: Catmull-Rom cubic kernel
(a = -0.5), kernel support widened by the scale ratio when anti-aliasing a
downscale, edge replication at the borders, and per-site weight normalization
so constant images are reproduced exactly. The resampling operator itself is
linear; clamping to [0, 255] happens only at the end and can be disabled.
"""

import numpy as np

from .validation import check_divisible


def cubic_kernel(x, a=-0.5):
    """Evaluate the two-piece cubic interpolation kernel at x (vectorized)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    xn = x[near]
    out[near] = (a + 2.0) * xn**3 - (a + 3.0) * xn**2 + 1.0
    xf = x[far]
    out[far] = a * xf**3 - 5.0 * a * xf**2 + 8.0 * a * xf - 4.0 * a
    return out


def resample_matrix(n_in, n_out, a=-0.5, antialias=True):
    """Dense (n_out, n_in) weight matrix for one axis of a separable resample.

    Output center i maps to input coordinate (i + 0.5) / s - 0.5 with
    s = n_out / n_in. When anti-aliasing a downscale the kernel is stretched
    by 1/s. Taps falling outside the axis replicate the edge sample. Each row
    is normalized to sum to 1.
    """
    scale = n_out / n_in
    kscale = scale if (antialias and scale < 1.0) else 1.0
    half = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    taps = int(np.ceil(2.0 * half)) + 1
    start = np.floor(centers - half).astype(np.int64) + 1
    cols = start[:, None] + np.arange(taps)[None, :]
    weights = cubic_kernel((centers[:, None] - cols) * kscale, a=a) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(n_out), taps)
    cols = np.clip(cols, 0, n_in - 1)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(matrix, (rows, cols.ravel()), weights.ravel())
    return matrix


def resample(image, out_h, out_w, a=-0.5, antialias=True, clamp=True):
    """Separable bicubic resample of an (H, W, C) raster to (out_h, out_w, C)."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    m_rows = resample_matrix(h, out_h, a=a, antialias=antialias)
    m_cols = resample_matrix(w, out_w, a=a, antialias=antialias)
    tmp = np.tensordot(m_rows, img, axes=(1, 0))
    out = np.tensordot(m_cols, tmp, axes=(1, 1)).transpose(1, 0, 2)
    if clamp:
        out = np.clip(out, 0.0, 255.0)
    return out[:, :, 0] if squeeze else out


def bicubic_downsample(image, spec, clamp=True):
    """Degrade an HR raster by the configured integer factor.

    The factor must divide both spatial dimensions exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    check_divisible(h, w, spec.factor)
    return resample(
        img, h // spec.factor, w // spec.factor,
        a=spec.kernel_a, antialias=spec.antialias, clamp=clamp,
    )


def bicubic_upsample(image, factor, a=-0.5, clamp=True):
    """Interpolate a raster up by an integer factor (no anti-aliasing)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    return resample(img, h * factor, w * factor, a=a, antialias=False, clamp=clamp)


def quantize_u8(image):
    """Quantize a [0, 255] float raster to uint8, rounding half away from zero."""
    arr = np.asarray(image, dtype=np.float64)
    rounded = np.copysign(np.floor(np.abs(arr) + 0.5), arr)
    return np.clip(rounded, 0, 255).astype(np.uint8)
