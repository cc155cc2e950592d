"""Simulated annotator hints.

Finds where a prediction disagrees with the ground truth (missing
center-lines and clearly superfluous strokes), picks the largest error
segment, samples a short contiguous sub-segment of its pixel path, and
dilates it into a signed stroke — the same shape a human drawing a quick
corrective scribble would produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .morphology import (
    dilate,
    get_edges,
    label_connectivity,
    neighbor_count_convolve,
    skeletonize,
)
from .rasters import as_mask, check_same_shape
from .strokes import StrokeWidthStats, sample_width

__all__ = [
    "Hint",
    "get_add",
    "get_erase",
    "hint_from_candidates",
    "hint_for_operation",
    "make_hint",
    "polyline_hint",
    "rasterize_polyline",
]

POLICIES = ("random_op", "longer_segment")
MAX_SUB_LEN_DEFAULT = 11


@dataclass
class Hint:
    """One signed corrective stroke.

    ``stroke`` is a ternary hint map carrying a single sign: only {0, +1}
    for an add hint, only {0, -1} for an erase hint. ``center_line`` is the
    undilated path the stroke was painted along.
    """

    operation: str  # "add" | "erase"
    stroke: np.ndarray
    source_segment_size: int
    width_used: float
    center_line: np.ndarray

    @property
    def sign(self) -> int:
        return 1 if self.operation == "add" else -1


def get_add(gt, pred) -> np.ndarray:
    """Missing center-line pixels: the gt skeleton not covered by pred."""
    gt, pred = as_mask(gt), as_mask(pred)
    check_same_shape(gt, pred)
    return skeletonize(gt) & ~pred


def get_erase(gt, pred, mu: float, sigma: float) -> np.ndarray:
    """Clearly superfluous center-lines of pred.

    The gt skeleton is dilated by round(mu + 2*sigma) so near-misses and
    width overshoot are tolerated; only prediction skeleton pixels outside
    that expansion count as erasable.
    """
    gt, pred = as_mask(gt), as_mask(pred)
    check_same_shape(gt, pred)
    expansion = int(round(mu + 2.0 * sigma))
    expanded = dilate(skeletonize(gt), expansion)
    return skeletonize(pred) & ~expanded


def _path_order(segment: np.ndarray) -> np.ndarray:
    """Order a connected segment's pixels by walking its path.

    Starts at a pixel with at most one in-segment neighbor (a path end);
    closed loops start at the lexicographically smallest pixel.
    """
    pixels = [tuple(p) for p in segment]
    index = {p: i for i, p in enumerate(pixels)}
    adjacency = {p: [] for p in pixels}
    for r, c in pixels:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                q = (r + dr, c + dc)
                if q in index:
                    adjacency[(r, c)].append(q)
    ends = [p for p in pixels if len(adjacency[p]) <= 1]
    start = min(ends) if ends else min(pixels)
    order = [start]
    visited = {start}
    current = start
    while True:
        nxt = [q for q in adjacency[current] if q not in visited]
        if not nxt:
            break
        current = min(nxt)
        order.append(current)
        visited.add(current)
    # stray unreached pixels (thick corners) are appended deterministically
    for p in pixels:
        if p not in visited:
            order.append(p)
    return np.asarray(order, dtype=np.int64)


def _segments(candidates: np.ndarray) -> list:
    """Candidate segments, largest first.

    Clean two-neighbor paths come from the edge-pixel rule. Regions that
    rule cannot represent (staircase skeletons, isolated pixels) would be
    invisible no matter how large, so the 8-connected components of the
    unclaimed remainder compete alongside by size. Pixels bordering a
    claimed path — its endpoints and junctions — are not re-offered.
    """
    segments = get_edges(candidates)
    covered = np.zeros(candidates.shape, dtype=bool)
    for seg in segments:
        covered[seg[:, 0], seg[:, 1]] = True
    leftover = candidates & ~covered & (neighbor_count_convolve(covered) == 0)
    if leftover.any():
        segments = segments + label_connectivity(leftover)
        segments.sort(key=lambda s: (-len(s), tuple(s[0])))
    return segments


def hint_from_candidates(
    candidates,
    operation: str,
    stats: StrokeWidthStats,
    width_mode: str,
    max_sub_len: int,
    rng: np.random.Generator,
) -> Hint | None:
    """Turn a precomputed candidate center-line mask into one hint.

    Picks the largest candidate segment, samples a contiguous sub-segment
    of its pixel path, and dilates it to the sampled width. Returns None
    when there are no candidate segments.
    """
    if operation not in ("add", "erase"):
        raise ValueError(f"unknown operation {operation!r}")
    candidates = as_mask(candidates)
    segments = _segments(candidates)
    if not segments:
        return None
    segment = segments[0]
    path = _path_order(segment)
    length = min(int(rng.integers(1, max_sub_len + 1)), len(path))
    start = int(rng.integers(0, len(path) - length + 1))
    sub = path[start : start + length]
    width = sample_width(stats, width_mode, int(rng.integers(0, 2**32)))

    center = np.zeros(candidates.shape, dtype=bool)
    center[sub[:, 0], sub[:, 1]] = True
    stroke = dilate(center, width).astype(np.int8)
    if operation == "erase":
        stroke = -stroke
    return Hint(
        operation=operation,
        stroke=stroke,
        source_segment_size=int(len(segment)),
        width_used=float(width),
        center_line=center,
    )


def hint_for_operation(
    gt,
    pred,
    stats: StrokeWidthStats,
    operation: str,
    width_mode: str,
    max_sub_len: int,
    rng: np.random.Generator,
) -> Hint | None:
    """Build one hint for a forced operation, or None if nothing qualifies."""
    gt, pred = as_mask(gt), as_mask(pred)
    check_same_shape(gt, pred)
    if operation == "add":
        candidates = get_add(gt, pred)
    elif operation == "erase":
        candidates = get_erase(gt, pred, stats.mu, stats.sigma)
    else:
        raise ValueError(f"unknown operation {operation!r}")
    return hint_from_candidates(candidates, operation, stats, width_mode, max_sub_len, rng)


def make_hint(
    gt,
    pred,
    stats: StrokeWidthStats,
    policy: str = "longer_segment",
    width_mode: str = "conservative",
    max_sub_len: int = MAX_SUB_LEN_DEFAULT,
    rng_seed=0,
) -> Hint | None:
    """Simulate one annotator correction.

    Chooses add vs erase by policy — ``random_op`` picks uniformly among
    the non-empty candidates, ``longer_segment`` the operation whose
    largest error segment has more pixels — then samples a sub-segment of
    at most ``max_sub_len`` path pixels and dilates it to the sampled
    width. Returns None when the prediction offers nothing to correct.
    Deterministic for a fixed seed.
    """
    gt, pred = as_mask(gt), as_mask(pred)
    check_same_shape(gt, pred)
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if max_sub_len < 1:
        raise ValueError(f"max_sub_len must be >= 1, got {max_sub_len}")
    rng = np.random.default_rng(rng_seed)

    add_segments = _segments(get_add(gt, pred))
    erase_segments = _segments(get_erase(gt, pred, stats.mu, stats.sigma))
    add_size = len(add_segments[0]) if add_segments else 0
    erase_size = len(erase_segments[0]) if erase_segments else 0
    if add_size == 0 and erase_size == 0:
        return None

    if policy == "random_op":
        operation = "add" if rng.integers(0, 2) == 0 else "erase"
        # dead choices fall back to the only productive operation
        if operation == "add" and add_size == 0:
            operation = "erase"
        elif operation == "erase" and erase_size == 0:
            operation = "add"
    else:
        operation = "add" if add_size >= erase_size else "erase"

    return hint_for_operation(gt, pred, stats, operation, width_mode, max_sub_len, rng)


def _polyline_centerline(shape, points) -> np.ndarray:
    """Plot a polyline's center-line pixels, clipped to the image."""
    pts = [(int(round(r)), int(round(c))) for r, c in points]
    if not pts:
        raise ValueError("polyline needs at least one point")
    h, w = shape
    center = np.zeros((h, w), dtype=bool)

    def plot(r, c):
        if 0 <= r < h and 0 <= c < w:
            center[r, c] = True

    plot(*pts[0])
    for (r0, c0), (r1, c1) in zip(pts, pts[1:]):
        dr, dc = abs(r1 - r0), abs(c1 - c0)
        sr = 1 if r0 < r1 else -1
        sc = 1 if c0 < c1 else -1
        err = dr - dc
        r, c = r0, c0
        while True:
            plot(r, c)
            if (r, c) == (r1, c1):
                break
            e2 = 2 * err
            if e2 > -dc:
                err -= dc
                r += sr
            if e2 < dr:
                err += dr
                c += sc
    return center


def rasterize_polyline(shape, points, width: float, sign: int) -> np.ndarray:
    """Rasterize an annotator polyline into a signed stroke.

    ``points`` is a sequence of (row, col) vertices; consecutive vertices
    are connected with Bresenham line segments, then the center-line is
    dilated to ``width``. A single point paints a dot.
    """
    if sign not in (1, -1):
        raise ValueError(f"stroke sign must be +1 or -1, got {sign}")
    center = _polyline_centerline(shape, points)
    stroke = dilate(center, width).astype(np.int8)
    return stroke if sign > 0 else -stroke


def polyline_hint(shape, points, width: float, sign: int) -> Hint:
    """Build a live-annotator Hint from a drawn polyline."""
    if sign not in (1, -1):
        raise ValueError(f"stroke sign must be +1 or -1, got {sign}")
    center = _polyline_centerline(shape, points)
    stroke = dilate(center, width).astype(np.int8)
    return Hint(
        operation="add" if sign > 0 else "erase",
        stroke=stroke if sign > 0 else -stroke,
        source_segment_size=int(center.sum()),
        width_used=float(width),
        center_line=center,
    )
