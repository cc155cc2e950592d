"""Depth-map preprocessing and raster file IO.

Depth maps are high-pass filtered (groove-scale detail survives, the slow
surface curvature of the mirror body is removed) and standardized with
statistics taken over the foreground only, so the void around the object
cannot skew them. Full scans are cut into non-overlapping evaluation
patches, or into large overlapping training tiles.

File formats: depth as PFM (Portable FloatMap) or float32 TIFF, masks as
8-bit grayscale PNG where any nonzero value reads as foreground.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .rasters import as_depth, as_mask

__all__ = [
    "PatchGrid",
    "TilePlan",
    "Mirror",
    "highpass",
    "normalize",
    "extract_eval_patches",
    "extract_training_tiles",
    "read_pfm",
    "write_pfm",
    "read_depth",
    "write_depth_tiff",
    "read_mask_png",
    "write_mask_png",
    "load_mirror",
    "write_mirror",
    "list_mirror_ids",
]

PATCH_SIZE_DEFAULT = 512
TILE_SIZE_DEFAULT = (2988, 2240)


# ---------------------------------------------------------------------------
# Filtering and normalization
# ---------------------------------------------------------------------------

def highpass(depth, sigma_gauss: float = 16.0, foreground=None) -> np.ndarray:
    """Remove low-frequency surface shape from a depth map.

    Subtracts a Gaussian-blurred copy whose values were first clamped to
    mean +- 3*std, so isolated spikes cannot bleed into the baseline. The
    clamp statistics come from the foreground when a mask is given,
    otherwise from the whole image. Reflected borders, kernel truncated
    at 4 sigma.
    """
    depth = as_depth(depth)
    if sigma_gauss <= 0:
        raise ValueError(f"sigma_gauss must be > 0, got {sigma_gauss}")
    region = depth if foreground is None else depth[as_mask(foreground)]
    if region.size == 0:
        raise ValueError("foreground mask selects no pixels")
    mean, std = float(region.mean()), float(region.std())
    clamped = np.clip(depth, mean - 3.0 * std, mean + 3.0 * std)
    baseline = gaussian_filter(clamped, sigma=sigma_gauss, mode="reflect", truncate=4.0)
    return depth - baseline


def normalize(depth, foreground) -> np.ndarray:
    """Standardize a depth map with foreground-only statistics.

    The same affine map (x - mean) / std is applied everywhere, so the
    background is transformed consistently even though it never
    contributes to the statistics.
    """
    depth = as_depth(depth)
    fg = as_mask(foreground)
    if depth.shape != fg.shape:
        raise ValueError(f"dimension mismatch: {depth.shape} vs {fg.shape}")
    if not fg.any():
        raise ValueError("foreground mask is empty")
    values = depth[fg]
    std = float(values.std())
    if std == 0.0:
        raise ValueError("zero variance over the foreground; cannot normalize")
    return (depth - float(values.mean())) / std


# ---------------------------------------------------------------------------
# Patch and tile planning
# ---------------------------------------------------------------------------

@dataclass
class PatchGrid:
    """Disjoint axis-aligned patch cover of an image.

    Origins step by ``patch_size``; the last row/column of patches may
    extend past the image and is zero-padded on extraction. ``keep`` flags
    patches that overlap the foreground at all.
    """

    height: int
    width: int
    patch_size: int
    origins: list = field(default_factory=list)
    keep: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.origins)

    def crop(self, raster: np.ndarray, index: int) -> np.ndarray:
        """Extract one zero-padded patch from a full raster."""
        r0, c0 = self.origins[index]
        s = self.patch_size
        out = np.zeros((s, s), dtype=raster.dtype)
        crop = raster[r0 : min(r0 + s, self.height), c0 : min(c0 + s, self.width)]
        out[: crop.shape[0], : crop.shape[1]] = crop
        return out

    def valid_extent(self, index: int) -> tuple[int, int]:
        """In-bounds (rows, cols) of a patch before zero padding starts."""
        r0, c0 = self.origins[index]
        s = self.patch_size
        return min(s, self.height - r0), min(s, self.width - c0)

    def valid_mask(self, index: int) -> np.ndarray:
        vh, vw = self.valid_extent(index)
        m = np.zeros((self.patch_size, self.patch_size), dtype=bool)
        m[:vh, :vw] = True
        return m

    def stitch(self, patches) -> np.ndarray:
        """Reassemble full-image raster from per-index patches (padding cropped)."""
        patches = list(patches)
        if len(patches) != len(self.origins):
            raise ValueError(f"expected {len(self.origins)} patches, got {len(patches)}")
        out = np.zeros((self.height, self.width), dtype=np.asarray(patches[0]).dtype)
        for (r0, c0), patch in zip(self.origins, patches):
            vh = min(self.patch_size, self.height - r0)
            vw = min(self.patch_size, self.width - c0)
            out[r0 : r0 + vh, c0 : c0 + vw] = np.asarray(patch)[:vh, :vw]
        return out


def extract_eval_patches(shape, foreground, patch_size: int = PATCH_SIZE_DEFAULT) -> PatchGrid:
    """Plan the disjoint evaluation patch grid over an image.

    A patch is kept when it overlaps at least one foreground pixel;
    all-background patches are filtered out up front.
    """
    h, w = shape
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {shape} smaller than patch size {patch_size}")
    fg = as_mask(foreground)
    if fg.shape != (h, w):
        raise ValueError(f"dimension mismatch: {fg.shape} vs {(h, w)}")
    grid = PatchGrid(height=h, width=w, patch_size=patch_size)
    for r0 in range(0, h, patch_size):
        for c0 in range(0, w, patch_size):
            grid.origins.append((r0, c0))
            grid.keep.append(bool(fg[r0 : r0 + patch_size, c0 : c0 + patch_size].any()))
    return grid


@dataclass
class TilePlan:
    """Overlapping training tiles at half-tile stride over a padded canvas."""

    tile_size: tuple
    stride: tuple
    padding: tuple  # extra pixels appended per axis
    origins: list

    def __len__(self) -> int:
        return len(self.origins)


def extract_training_tiles(shape, tile_size=TILE_SIZE_DEFAULT) -> TilePlan:
    """Plan overlapping tiles with a stride of half the tile size.

    Each axis is padded with the minimal amount that makes the origin
    count exact: pad = (tile - dim) mod stride. At the native scan
    resolution of 8964x6716 this pads 4 pixels and yields a 5x5 grid.
    """
    h, w = shape
    th, tw = tile_size
    if h < th or w < tw:
        raise ValueError(f"image {shape} smaller than one tile {tile_size}")
    sh, sw = th // 2, tw // 2
    pad_h = (th - h) % sh
    pad_w = (tw - w) % sw
    rows = range(0, h + pad_h - th + 1, sh)
    cols = range(0, w + pad_w - tw + 1, sw)
    origins = [(r, c) for r in rows for c in cols]
    return TilePlan(tile_size=(th, tw), stride=(sh, sw), padding=(pad_h, pad_w), origins=origins)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM file (rows stored bottom-up)."""
    data = Path(path).read_bytes()
    match = re.match(rb"(Pf|PF)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if match is None:
        raise ValueError(f"{path}: not a PFM file")
    kind, width, height, scale = (
        match.group(1),
        int(match.group(2)),
        int(match.group(3)),
        float(match.group(4)),
    )
    if kind != b"Pf":
        raise ValueError(f"{path}: expected a grayscale PFM, got a color one")
    endian = "<" if scale < 0 else ">"
    pixels = np.frombuffer(
        data, dtype=f"{endian}f4", count=width * height, offset=match.end()
    )
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated PFM payload")
    return pixels.reshape(height, width)[::-1].astype(np.float64)


def write_pfm(path, depth) -> None:
    """Write a single-channel little-endian PFM file."""
    depth = as_depth(depth)
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(depth[::-1].astype("<f4").tobytes())


def write_depth_tiff(path, depth) -> None:
    depth = as_depth(depth)
    Image.fromarray(depth.astype(np.float32), mode="F").save(path)


def read_depth(path) -> np.ndarray:
    """Read a depth map; PFM by extension, anything else via Pillow as float."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    with Image.open(path) as img:
        return np.asarray(img.convert("F"), dtype=np.float64)


def read_mask_png(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG as a binary mask (nonzero = foreground)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


def write_mask_png(path, mask) -> None:
    mask = as_mask(mask)
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path)


# ---------------------------------------------------------------------------
# Dataset layout
# ---------------------------------------------------------------------------

@dataclass
class Mirror:
    """One scanned object: depth map plus its mask triplet."""

    mirror_id: str
    depth: np.ndarray
    gt: np.ndarray | None
    foreground: np.ndarray
    pred_init: np.ndarray | None

    @property
    def shape(self):
        return self.depth.shape


def load_mirror(root, mirror_id: str, require_gt: bool = True) -> Mirror:
    """Load one ``<root>/<mirror_id>/`` directory.

    Expects ``depth.pfm`` (or ``depth.tif``/``depth.tiff``),
    ``foreground.png``, and — unless ``require_gt`` is off — ``gt.png``
    and ``pred_init.png``.
    """
    folder = Path(root) / mirror_id
    depth_path = next(
        (folder / name for name in ("depth.pfm", "depth.tif", "depth.tiff")
         if (folder / name).exists()),
        None,
    )
    if depth_path is None:
        raise FileNotFoundError(f"{folder}: no depth.pfm or depth.tif(f) found")
    depth = read_depth(depth_path)

    fg_path = folder / "foreground.png"
    foreground = read_mask_png(fg_path) if fg_path.exists() else np.ones(depth.shape, bool)

    def optional(name):
        p = folder / name
        if p.exists():
            return read_mask_png(p)
        if require_gt:
            raise FileNotFoundError(f"{p} is missing")
        return None

    gt = optional("gt.png")
    pred_init = optional("pred_init.png")
    for name, m in (("foreground", foreground), ("gt", gt), ("pred_init", pred_init)):
        if m is not None and m.shape != depth.shape:
            raise ValueError(f"{mirror_id}/{name}: shape {m.shape} != depth {depth.shape}")
    return Mirror(mirror_id=mirror_id, depth=depth, gt=gt,
                  foreground=foreground, pred_init=pred_init)


def write_mirror(root, mirror: Mirror) -> Path:
    folder = Path(root) / mirror.mirror_id
    folder.mkdir(parents=True, exist_ok=True)
    write_pfm(folder / "depth.pfm", mirror.depth)
    write_mask_png(folder / "foreground.png", mirror.foreground)
    if mirror.gt is not None:
        write_mask_png(folder / "gt.png", mirror.gt)
    if mirror.pred_init is not None:
        write_mask_png(folder / "pred_init.png", mirror.pred_init)
    return folder


def list_mirror_ids(root) -> list:
    """Mirror ids under a dataset root, sorted for reproducible iteration."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    ids = sorted(
        p.name for p in root.iterdir()
        if p.is_dir() and any((p / n).exists() for n in ("depth.pfm", "depth.tif", "depth.tiff"))
    )
    return ids
