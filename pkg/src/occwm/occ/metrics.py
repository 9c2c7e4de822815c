"""Occupancy reconstruction/forecast metrics: binary IoU and semantic mIoU."""

from __future__ import annotations

import numpy as np

from .grid import AIR_ID, OccupancyGrid, SemanticLabelSet


def _check_dims(pred: OccupancyGrid, gt: OccupancyGrid) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"grid dimension mismatch: {pred.shape} vs {gt.shape}")


def iou_geometry(pred: OccupancyGrid, gt: OccupancyGrid) -> float:
    """Binary occupied-vs-air IoU; both-empty counts as perfect agreement."""
    _check_dims(pred, gt)
    p = pred.occupied_mask()
    g = gt.occupied_mask()
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(p & g))
    return inter / union


def miou_semantic(pred: OccupancyGrid, gt: OccupancyGrid, labels: SemanticLabelSet) -> float:
    """Mean per-class IoU over non-air classes present in pred or gt.

    Classes absent from both grids are excluded from the mean; if no class
    qualifies (both grids all air) the score is 1.0.
    """
    _check_dims(pred, gt)
    ious = []
    for c in range(1, labels.num_classes):
        p = pred.labels == c
        g = gt.labels == c
        union = int(np.count_nonzero(p | g))
        if union == 0:
            continue
        inter = int(np.count_nonzero(p & g))
        ious.append(inter / union)
    if not ious:
        return 1.0
    return float(np.mean(ious))
