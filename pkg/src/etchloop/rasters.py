"""Core raster types and the mask/hint composition rules.

Three kinds of rasters flow through the engine, all of them 2-D row-major
numpy arrays indexed ``(row, col)``:

* binary masks -- ``bool``; predictions, ground truth, foreground masks
* depth maps   -- floating point, finite everywhere
* hint maps    -- ``int8`` ternary {-1, 0, +1}; accumulated annotator strokes

Values are treated as immutable: every operation returns a new array and
never writes to its inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_mask",
    "as_depth",
    "as_hints",
    "check_same_shape",
    "compose",
    "accumulate",
    "annotated_pixel_count",
]


def as_mask(arr) -> np.ndarray:
    """Validate and return a 2-D boolean mask.

    Accepts bool arrays or 0/1-valued numeric arrays.
    """
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {a.shape}")
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    return a.astype(bool)


def as_depth(arr) -> np.ndarray:
    """Validate and return a 2-D float depth map with finite values."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("depth map contains NaN or infinite values")
    return a


def as_hints(arr) -> np.ndarray:
    """Validate and return a 2-D int8 hint map with values in {-1, 0, +1}."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"hint map must be 2-D, got shape {a.shape}")
    if not np.isin(a, (-1, 0, 1)).all():
        raise ValueError("hint values must be in {-1, 0, +1}")
    return a.astype(np.int8)


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def compose(y, delta) -> np.ndarray:
    """Overlay hints onto a mask: 1 where delta=+1, 0 where delta=-1, else y."""
    y = as_mask(y)
    delta = as_hints(delta)
    check_same_shape(y, delta)
    out = y.copy()
    out[delta == 1] = True
    out[delta == -1] = False
    return out


def accumulate(delta, new_hint) -> np.ndarray:
    """Merge a single-sign stroke into an accumulated hint map.

    Previously set entries of ``delta`` stay fixed; only zero-valued entries
    take the new stroke's values. ``new_hint`` must carry one sign only
    (all +1 or all -1 besides zeros).
    """
    delta = as_hints(delta)
    new_hint = as_hints(new_hint)
    check_same_shape(delta, new_hint)
    if (new_hint > 0).any() and (new_hint < 0).any():
        raise ValueError("new hint mixes +1 and -1 strokes")
    out = delta.copy()
    untouched = delta == 0
    out[untouched] = new_hint[untouched]
    return out


def annotated_pixel_count(delta) -> int:
    """Number of annotated (nonzero) pixels in a hint map."""
    return int(np.count_nonzero(as_hints(delta)))
