"""Input validation helpers shared by the data pipeline, networks and estimator."""

import numpy as np

IGNORE_ID = 255


def check_raster(image, name="image"):
    """Validate an intensity raster and return it as a float64 (H, W, C) array.

    Accepts (H, W) or (H, W, C) input. Values must lie in [0, 255].
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected 2D or 3D array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"{name}: degenerate shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1e-6 or hi > 255.0 + 1e-6:
        raise ValueError(f"{name}: values outside [0, 255] (min={lo:.3f}, max={hi:.3f})")
    return np.clip(arr, 0.0, 255.0)


def check_labels(labels, num_classes=None, name="labels"):
    """Validate a label map: (H, W) integer array, non-ignore ids < num_classes."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected 2D array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name}: expected integer dtype, got {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name}: negative class ids")
    if num_classes is not None:
        counted = arr[arr != IGNORE_ID]
        if counted.size and counted.max() >= num_classes:
            raise ValueError(
                f"{name}: class id {int(counted.max())} >= num_classes {num_classes}"
            )
    return arr.astype(np.int64)


def check_same_hw(a, b, name_a="image", name_b="labels"):
    if a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1]:
        raise ValueError(
            f"{name_a} and {name_b} dimensions differ: "
            f"{a.shape[:2]} vs {b.shape[:2]}"
        )


def check_divisible(h, w, r, name="image"):
    if h % r or w % r:
        raise ValueError(f"{name}: dimensions {h}x{w} not divisible by factor {r}")
