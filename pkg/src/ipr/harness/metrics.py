"""Voxel overlap metrics for predicted versus ground-truth occupancy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import VoxelGrid


class EmptyUnion(ValueError):
    """Both grids are empty; ``iou`` resolves this to 1 rather than raising."""


@dataclass(frozen=True)
class OverlapScores:
    iou: float
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


def _cells(g) -> np.ndarray:
    return np.asarray(g.cells if isinstance(g, VoxelGrid) else g).astype(bool)


def overlap(pred, truth) -> OverlapScores:
    """IoU, precision and recall of two occupancy grids on the same lattice.

    Precision divides by the predicted count and recall by the true count; an
    empty denominator yields 1 when the other side is empty too, else 0.
    """
    if isinstance(pred, VoxelGrid) and isinstance(truth, VoxelGrid):
        if pred.dims != truth.dims or not np.isclose(pred.resolution, truth.resolution) \
                or not np.allclose(pred.origin, truth.origin):
            raise ValueError("grids do not share a frame")
    a, b = _cells(pred), _cells(truth)
    if a.shape != b.shape:
        raise ValueError("grids differ in shape")
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    na, nb = int(a.sum()), int(b.sum())
    if union == 0:
        return OverlapScores(1.0, 1.0, 1.0, 1.0)
    prec = inter / na if na else 0.0
    rec = inter / nb if nb else 0.0
    return OverlapScores(inter / union, prec, rec, f1_score(prec, rec))


def iou(pred, truth) -> float:
    return overlap(pred, truth).iou
