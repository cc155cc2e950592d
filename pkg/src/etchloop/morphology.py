"""Pixel-level morphological primitives.

Exact Euclidean distance transform, medial-axis thinning, disk dilation,
8-neighbor counting, and connected-component labeling. These are the
building blocks for stroke-width measurement, error-segment extraction,
and hint rasterization.

Segment lists ("SkeletonSegments") are plain Python lists of ``(n, 2)``
int arrays of (row, col) pixel coordinates. Pixels within a segment are
sorted lexicographically; the list is sorted by descending pixel count,
ties broken by the segment's smallest (row, col) pixel.
"""

from __future__ import annotations

import math

import numpy as np

from .rasters import as_mask

try:  # optional acceleration for the distance transform's row scans
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

__all__ = [
    "euclidean_distance_transform",
    "skeletonize",
    "dilate",
    "disk_offsets",
    "neighbor_count_convolve",
    "get_edges",
    "label_connectivity",
]

Segments = list  # list of (n, 2) int64 arrays, see module docstring


# ---------------------------------------------------------------------------
# Euclidean distance transform
# ---------------------------------------------------------------------------

@njit(cache=True)
def _row_envelopes(g2: np.ndarray, out: np.ndarray) -> None:
    """Per-row lower envelope of parabolas over squared column distances.

    ``g2[r, c]`` holds the squared vertical distance from (r, c) to the
    nearest background pixel in column c; ``out`` receives the full squared
    Euclidean distances.
    """
    n_rows, n_cols = g2.shape
    v = np.empty(n_cols, dtype=np.int64)
    z = np.empty(n_cols + 1, dtype=np.float64)
    for r in range(n_rows):
        f = g2[r]
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, n_cols):
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            while s <= z[k]:
                k -= 1
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(n_cols):
            while z[k + 1] < q:
                k += 1
            out[r, q] = (q - v[k]) * (q - v[k]) + f[v[k]]


def _border_distance(shape: tuple[int, int]) -> np.ndarray:
    """Distance to the nearest lattice point outside the raster."""
    h, w = shape
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    vert = np.minimum(rows + 1.0, h - rows)[:, None]
    horiz = np.minimum(cols + 1.0, w - cols)[None, :]
    return np.minimum(vert, horiz) * np.ones(shape)


def euclidean_distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance from each pixel to the nearest background pixel.

    Background (0) pixels map to 0. A mask with no background at all falls
    back to the distance to the nearest point outside the raster boundary.

    Two-pass separable algorithm: a vertical sweep produces per-column
    distances, then a lower-envelope scan over each row combines them.
    """
    mask = as_mask(mask)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    if mask.all():
        return _border_distance(mask.shape)

    h, w = mask.shape
    big = float(h + w + 1)
    d = np.where(mask, big, 0.0)
    for r in range(1, h):
        np.minimum(d[r], d[r - 1] + 1.0, out=d[r])
    for r in range(h - 2, -1, -1):
        np.minimum(d[r], d[r + 1] + 1.0, out=d[r])

    out = np.empty((h, w), dtype=np.float64)
    _row_envelopes(d * d, out)
    return np.sqrt(out)


# ---------------------------------------------------------------------------
# Thinning (two-subiteration medial-axis reduction)
# ---------------------------------------------------------------------------

def _neighbor_views(padded: np.ndarray):
    """The 8 neighbors of every pixel, clockwise from north: P2..P9."""
    return (
        padded[:-2, 1:-1],   # N
        padded[:-2, 2:],     # NE
        padded[1:-1, 2:],    # E
        padded[2:, 2:],      # SE
        padded[2:, 1:-1],    # S
        padded[2:, :-2],     # SW
        padded[1:-1, :-2],   # W
        padded[:-2, :-2],    # NW
    )


def skeletonize(mask) -> np.ndarray:
    """Thin a mask to its 1-pixel-wide medial representation.

    Classic two-subiteration thinning: pixels are deleted in alternating
    passes while they have 2..6 foreground neighbors, exactly one 0->1
    transition around their 8-neighborhood, and pass the directional
    corner tests. Iterates to a fixed point, so the result is idempotent
    and preserves 8-connectivity of each component.
    """
    img = as_mask(mask).copy()
    if not img.any():
        return img
    while True:
        changed = False
        for subiter in (0, 1):
            p = np.pad(img, 1)
            n = _neighbor_views(p)
            b = np.zeros(img.shape, dtype=np.uint8)
            for nb in n:
                b += nb
            a = np.zeros(img.shape, dtype=np.uint8)
            for i in range(8):
                a += (~n[i]) & n[(i + 1) % 8]
            cond = img & (b >= 2) & (b <= 6) & (a == 1)
            p2, _, p4, _, p6, _, p8, _ = n
            if subiter == 0:
                cond &= ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                cond &= ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            if cond.any():
                img[cond] = False
                changed = True
        if not changed:
            return img


# ---------------------------------------------------------------------------
# Dilation
# ---------------------------------------------------------------------------

def disk_offsets(radius: int) -> np.ndarray:
    """(dy, dx) offsets of the disk structuring element of the given radius."""
    if radius <= 0:
        return np.zeros((1, 2), dtype=np.int64)
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= radius * radius
    return np.stack([dy[keep], dx[keep]], axis=1)


def dilate(mask, width) -> np.ndarray:
    """Dilate with a disk structuring element.

    The parameter is a stroke *width*: the disk radius is ``floor(width/2)``,
    so dilating a 1-pixel line by ``width`` yields a stroke about ``width``
    pixels across. ``width`` in [0, 2) leaves the mask unchanged.
    """
    mask = as_mask(mask)
    if width < 0:
        raise ValueError(f"dilation width must be >= 0, got {width}")
    radius = int(math.floor(width / 2.0))
    if radius == 0 or not mask.any():
        return mask.copy()

    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    r0 = max(int(rows.min()) - radius, 0)
    r1 = min(int(rows.max()) + radius + 1, h)
    c0 = max(int(cols.min()) - radius, 0)
    c1 = min(int(cols.max()) + radius + 1, w)

    src = mask[r0:r1, c0:c1]
    box = np.zeros_like(src)
    bh, bw = src.shape
    for dy, dx in disk_offsets(radius):
        if abs(dy) >= bh or abs(dx) >= bw:
            continue  # shift larger than the crop: no overlap to transfer
        ts0, ts1 = max(dy, 0), bh + min(dy, 0)
        ss0, ss1 = max(-dy, 0), bh + min(-dy, 0)
        tc0, tc1 = max(dx, 0), bw + min(dx, 0)
        sc0, sc1 = max(-dx, 0), bw + min(-dx, 0)
        box[ts0:ts1, tc0:tc1] |= src[ss0:ss1, sc0:sc1]

    out = mask.copy()
    out[r0:r1, c0:c1] |= box
    return out


# ---------------------------------------------------------------------------
# Neighbor counting and segment extraction
# ---------------------------------------------------------------------------

def neighbor_count_convolve(skeleton) -> np.ndarray:
    """Convolve with the 3x3 kernel of ones and center weight 10.

    Foreground pixels read 10 + (number of foreground 8-neighbors);
    background pixels carry just their neighbor sum. Zero padding at the
    border, so pixels outside the raster never count as neighbors.
    """
    skel = as_mask(skeleton)
    p = np.pad(skel, 1)
    out = np.zeros(skel.shape, dtype=np.int32)
    for nb in _neighbor_views(p):
        out += nb
    out += 10 * skel.astype(np.int32)
    return out


_NEIGHBOR_STEPS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def label_connectivity(mask) -> Segments:
    """Partition foreground pixels into maximal 8-connected components.

    Returns segments sorted by descending size; ties broken by the
    segment's lexicographically smallest pixel.
    """
    mask = as_mask(mask)
    h, w = mask.shape
    flat = mask.ravel()
    seen = np.zeros(flat.shape, dtype=bool)
    segments = []
    for start in np.flatnonzero(flat):
        if seen[start]:
            continue
        seen[start] = True
        stack = [int(start)]
        pixels = []
        while stack:
            idx = stack.pop()
            pixels.append(idx)
            r, c = divmod(idx, w)
            for dr, dc in _NEIGHBOR_STEPS:
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    j = rr * w + cc
                    if flat[j] and not seen[j]:
                        seen[j] = True
                        stack.append(j)
        pixels.sort()
        arr = np.asarray(pixels, dtype=np.int64)
        segments.append(np.stack([arr // w, arr % w], axis=1))
    segments.sort(key=lambda s: (-len(s), tuple(s[0])))
    return segments


def get_edges(skeleton) -> Segments:
    """Edge segments of a skeleton, sorted by descending length.

    An edge pixel has exactly two foreground pixels in its 8-neighborhood,
    which excludes line endpoints (one neighbor) and junctions (three or
    more). Edge pixels are grouped by 8-connectivity.
    """
    skel = as_mask(skeleton)
    edges = neighbor_count_convolve(skel) == 12
    return label_connectivity(edges)
