"""Mask evaluation metrics.

IoU for region overlap, and the pseudo-F-measure family used for thin-line
tracings: precision against the full ground-truth mask combined with a
pseudo-recall computed against the ground truth's skeleton, so a prediction
is not punished for small width deviations. ``pfm_delta`` reports the
relative gain of a refined mask over a manually composed one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .morphology import skeletonize
from .rasters import as_mask, check_same_shape

__all__ = [
    "MetricReport",
    "UndefinedMetricError",
    "iou",
    "pixel_precision",
    "pseudo_recall",
    "pfm",
    "pfm_from_counts",
    "pfm_delta",
    "stitch_patches",
    "whole_mirror_metrics",
    "evaluate_pair",
]


class UndefinedMetricError(ValueError):
    """A metric's denominator vanished and no convention covers the case."""


@dataclass
class MetricReport:
    iou: float
    precision: float
    p_recall: float
    pfm: float
    pfm_delta: float | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "iou": round(self.iou, 6),
            "precision": round(self.precision, 6),
            "p_recall": round(self.p_recall, 6),
            "pfm": round(self.pfm, 6),
        }
        doc["pfm_delta"] = None if self.pfm_delta is None else round(self.pfm_delta, 6)
        return doc


def iou(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = as_mask(pred), as_mask(gt)
    check_same_shape(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


def pixel_precision(pred, gt) -> float:
    """|pred AND gt| / |pred|; an empty prediction scores 0."""
    pred, gt = as_mask(pred), as_mask(gt)
    check_same_shape(pred, gt)
    n_pred = int(np.count_nonzero(pred))
    if n_pred == 0:
        return 0.0
    return int(np.count_nonzero(pred & gt)) / n_pred


def pseudo_recall(pred, gt_skeleton) -> float:
    """|pred AND skeleton| / |skeleton|.

    With an empty skeleton (empty ground truth) the score is 1 for an empty
    prediction and 0 otherwise.
    """
    pred, gt_skeleton = as_mask(pred), as_mask(gt_skeleton)
    check_same_shape(pred, gt_skeleton)
    n_skel = int(np.count_nonzero(gt_skeleton))
    if n_skel == 0:
        return 1.0 if not pred.any() else 0.0
    return int(np.count_nonzero(pred & gt_skeleton)) / n_skel


def pfm_from_counts(n_pred: int, n_tp: int, n_skel: int, n_skel_hit: int) -> float:
    """Pseudo-F-measure from raw pixel counts (see ``pfm``)."""
    if n_pred == 0 and n_skel == 0:
        return 1.0
    precision = 0.0 if n_pred == 0 else n_tp / n_pred
    if n_skel == 0:
        p_recall = 1.0 if n_pred == 0 else 0.0
    else:
        p_recall = n_skel_hit / n_skel
    if precision + p_recall == 0.0:
        return 0.0
    return 2.0 * precision * p_recall / (precision + p_recall)


def pfm(pred, gt, gt_skeleton=None) -> float:
    """Pseudo-F-measure: harmonic mean of precision and pseudo-recall.

    Precision is measured against the full ground truth, pseudo-recall
    against its skeleton. Both masks empty scores 1.0; exactly one empty
    scores 0.0. The skeleton is recomputed from ``gt`` unless a
    precomputed one is passed in.
    """
    pred, gt = as_mask(pred), as_mask(gt)
    check_same_shape(pred, gt)
    skel = skeletonize(gt) if gt_skeleton is None else as_mask(gt_skeleton)
    check_same_shape(pred, skel)
    return pfm_from_counts(
        n_pred=int(np.count_nonzero(pred)),
        n_tp=int(np.count_nonzero(pred & gt)),
        n_skel=int(np.count_nonzero(skel)),
        n_skel_hit=int(np.count_nonzero(pred & skel)),
    )


def pfm_delta(refined, composed, gt) -> float:
    """Relative pseudo-F-measure gain of ``refined`` over ``composed``."""
    gt = as_mask(gt)
    skel = skeletonize(gt)
    base = pfm(composed, gt, skel)
    if base == 0.0:
        raise UndefinedMetricError("composed mask scores 0; relative gain undefined")
    return (pfm(refined, gt, skel) - base) / base


def evaluate_pair(pred, gt) -> MetricReport:
    """All plain metrics of one prediction/ground-truth pair."""
    pred, gt = as_mask(pred), as_mask(gt)
    check_same_shape(pred, gt)
    skel = skeletonize(gt)
    return MetricReport(
        iou=iou(pred, gt),
        precision=pixel_precision(pred, gt),
        p_recall=pseudo_recall(pred, skel),
        pfm=pfm(pred, gt, skel),
    )


def stitch_patches(shape, patches) -> np.ndarray:
    """Reassemble a full mask from ``((row, col), patch_mask)`` pieces.

    Patches must tile the target disjointly; pieces may extend past the
    image border (zero-padded extraction) but their overlap with the image
    must cover every pixel exactly once.
    """
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    counts = np.zeros((h, w), dtype=np.uint8)
    for (r0, c0), piece in patches:
        piece = as_mask(piece)
        ph, pw = piece.shape
        r1, c1 = min(r0 + ph, h), min(c0 + pw, w)
        if r0 < 0 or c0 < 0 or r0 >= h or c0 >= w:
            raise ValueError(f"patch origin ({r0}, {c0}) outside image {shape}")
        view = piece[: r1 - r0, : c1 - c0]
        out[r0:r1, c0:c1] |= view
        counts[r0:r1, c0:c1] += 1
    if (counts > 1).any():
        raise ValueError("patches overlap")
    if (counts == 0).any():
        raise ValueError("patches do not cover the image")
    return out


def whole_mirror_metrics(shape, pred_patches, gt_patches) -> MetricReport:
    """Metrics of the stitched full-resolution masks.

    Both patch lists are ``((row, col), mask)`` pairs tiling the same
    ``shape``. Scores are computed once on the reassembled images, not
    averaged over patches.
    """
    pred = stitch_patches(shape, pred_patches)
    gt = stitch_patches(shape, gt_patches)
    return evaluate_pair(pred, gt)
