"""Synthetic engraved-mirror corpus.

Generates depth scans with known line annotations so the interaction loop
can be exercised end to end without scan data: smooth wandering grooves cut
into a slowly varying background, plus short scratch distractors kept well
away from the real lines. The initial prediction is the ground truth with a
few stretches knocked out (false negatives) and some scratches added back
(false positives), which is the error mix the corrective loop must fix.
"""

from __future__ import annotations

import numpy as np

from .morphology import dilate
from .preprocess import Mirror, write_mirror

__all__ = ["generate_mirror", "generate_corpus"]

# Distractor scratches stay at least this many pixels from any true line so
# erase candidates are unambiguous.
SCRATCH_CLEARANCE = 12


def _wandering_path(rng: np.random.Generator, size: int, margin: int,
                    min_len: int = 120, max_len: int = 420) -> np.ndarray:
    """Random smooth curve as float (row, col) points with unit steps."""
    usable = size - 2 * margin
    min_len = min(min_len, int(1.2 * usable))
    for _ in range(50):
        r = rng.uniform(margin, size - margin)
        c = rng.uniform(margin, size - margin)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        pts = []
        for _ in range(max_len):
            pts.append((r, c))
            theta += rng.normal(0.0, 0.06)
            r += np.sin(theta)
            c += np.cos(theta)
            if not (margin <= r < size - margin and margin <= c < size - margin):
                break
        if len(pts) >= min_len:
            return np.asarray(pts)
    # Pathological rng streams get a straight diagonal fallback.
    t = np.arange(usable, dtype=float)
    return np.stack([margin + t, margin + t], axis=1)


def _path_mask(path: np.ndarray, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    rc = np.round(path).astype(int)
    mask[rc[:, 0], rc[:, 1]] = True
    return mask


def _scratch(rng: np.random.Generator, size: int, margin: int) -> np.ndarray:
    """Short straight scratch center-line anywhere inside the margin."""
    length = int(rng.integers(15, 41))
    theta = rng.uniform(0.0, 2.0 * np.pi)
    r0 = rng.uniform(margin, size - margin)
    c0 = rng.uniform(margin, size - margin)
    t = np.arange(length, dtype=float)
    pts = np.stack([r0 + t * np.sin(theta), c0 + t * np.cos(theta)], axis=1)
    pts = pts[(pts[:, 0] >= 1) & (pts[:, 0] < size - 1)
              & (pts[:, 1] >= 1) & (pts[:, 1] < size - 1)]
    if len(pts) < 8:
        return np.zeros((size, size), dtype=bool)
    return _path_mask(pts, size)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Slowly varying surface: two long-wavelength waves plus a tilt."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    wave_r = rng.uniform(250.0, 450.0)
    wave_c = rng.uniform(250.0, 450.0)
    amp_r, amp_c = rng.uniform(0.2, 0.4, size=2)
    phase_r, phase_c = rng.uniform(0.0, 2.0 * np.pi, size=2)
    tilt_r, tilt_c = rng.uniform(-0.3, 0.3, size=2)
    return (amp_r * np.sin(2.0 * np.pi * rr / wave_r + phase_r)
            + amp_c * np.cos(2.0 * np.pi * cc / wave_c + phase_c)
            + tilt_r * rr / size + tilt_c * cc / size)


def generate_mirror(
    mirror_id: str,
    seed,
    size: int = 512,
    n_curves: int = 4,
    n_scratches: int = 6,
    n_removed: int = 3,
) -> Mirror:
    """Generate one synthetic mirror with ground truth and a flawed prediction.

    Grooves are cut 1.0 deep along smooth random curves whose widths are
    drawn from a Gamma law; scratches are cut 0.8 deep, shorter, thinner,
    and kept >= SCRATCH_CLEARANCE pixels away from every groove. The
    initial prediction misses ``n_removed`` stretches of real line and
    wrongly includes every other scratch.
    """
    if size < 96:
        raise ValueError(f"mirror size must be >= 96, got {size}")
    rng = np.random.default_rng(seed)
    margin = 24

    # True engraved lines.
    gt = np.zeros((size, size), dtype=bool)
    paths = []
    widths = []
    for _ in range(n_curves):
        path = _wandering_path(rng, size, margin)
        width = float(np.clip(rng.gamma(shape=50.0, scale=0.13), 5.0, 9.0))
        gt |= dilate(_path_mask(path, size), width)
        paths.append(path)
        widths.append(width)

    # Scratch distractors, clear of the lines and of each other.
    keepout = dilate(gt, 2 * SCRATCH_CLEARANCE + 1)
    scratches = []
    attempts = 0
    while len(scratches) < n_scratches and attempts < 200:
        attempts += 1
        line = _scratch(rng, size, margin)
        if not line.any() or (line & keepout).any():
            continue
        scratches.append(line)
        keepout |= dilate(line, 13)

    depth = _background(rng, size).astype(np.float32)
    depth[gt] -= 1.0
    scratch_fp = np.zeros((size, size), dtype=bool)
    for i, line in enumerate(scratches):
        body = dilate(line, 3)
        depth[body] -= 0.8
        if i % 2 == 0:
            scratch_fp |= body

    # Initial prediction: drop a few stretches, keep some scratches.
    removed = np.zeros((size, size), dtype=bool)
    for _ in range(n_removed):
        idx = int(rng.integers(0, len(paths)))
        path = paths[idx]
        span = min(int(rng.integers(40, 91)), len(path))
        start = int(rng.integers(0, len(path) - span + 1))
        stretch = _path_mask(path[start:start + span], size)
        removed |= dilate(stretch, widths[idx] + 4.0)
    pred_init = (gt & ~removed) | scratch_fp

    return Mirror(
        mirror_id=mirror_id,
        depth=depth,
        foreground=np.ones((size, size), dtype=bool),
        gt=gt,
        pred_init=pred_init,
    )


def generate_corpus(root, count: int, seed=0, size: int = 512, **kwargs) -> list[str]:
    """Write ``count`` synthetic mirrors under ``root``; returns their ids."""
    ids = []
    for i in range(count):
        mirror_id = f"synth{i:03d}"
        mirror = generate_mirror(mirror_id, seed=[seed, i], size=size, **kwargs)
        write_mirror(root, mirror)
        ids.append(mirror_id)
    return ids
