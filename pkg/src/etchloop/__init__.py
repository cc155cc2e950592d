"""Interactive refinement engine for engraved-line segmentation masks."""

from .rasters import accumulate, annotated_pixel_count, as_depth, as_hints, as_mask, compose
from .morphology import (
    dilate,
    euclidean_distance_transform,
    get_edges,
    label_connectivity,
    neighbor_count_convolve,
    skeletonize,
)

__version__ = "0.1.0"
