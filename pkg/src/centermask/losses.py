"""Location targets, mask targets and the terms of the multi-task loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor

INF = float("inf")
DEFAULT_RANGES = {3: (-INF, 64.0), 4: (64.0, 128.0), 5: (128.0, 256.0), 6: (256.0, 512.0), 7: (512.0, INF)}


@dataclass
class LocationTargets:
    """Targets for every location of every level, concatenated in level order."""

    labels: np.ndarray  # (M,) class index or -1 for background
    boxes: np.ndarray  # (M, 4) l, t, r, b; zero for background
    centerness: np.ndarray  # (M,) zero for background
    level_sizes: tuple

    @property
    def positive(self) -> np.ndarray:
        return np.nonzero(self.labels >= 0)[0]

    def level(self, k_index: int) -> slice:
        start = sum(self.level_sizes[:k_index])
        return slice(start, start + self.level_sizes[k_index])


def centerness_target(l, t, r, b):
    """sqrt(min(l, r)/max(l, r) * min(t, b)/max(t, b)); works on scalars or arrays."""
    l, t, r, b = (np.asarray(v, dtype=np.float64) for v in (l, t, r, b))
    if np.any(l <= 0) or np.any(t <= 0) or np.any(r <= 0) or np.any(b <= 0):
        raise ValueError("centerness needs positive offsets")
    val = np.sqrt((np.minimum(l, r) / np.maximum(l, r)) * (np.minimum(t, b) / np.maximum(t, b)))
    return float(val) if val.ndim == 0 else val


def fcos_assign_targets(gt_boxes: np.ndarray, gt_labels: np.ndarray, grids: dict,
                        ranges: Optional[dict] = None) -> LocationTargets:
    """Assign each location to the smallest box that contains it and fits its level.

    ``grids`` maps level -> (L, 2) location coordinates. A location is positive
    for a box when it lies strictly inside it and the largest of its four
    offsets falls in the level's half-open range (lo, hi].
    """
    ranges = DEFAULT_RANGES if ranges is None else ranges
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    areas = (gt_boxes[:, 2] - gt_boxes[:, 0]) * (gt_boxes[:, 3] - gt_boxes[:, 1])
    labels, boxes, sizes = [], [], []
    for level in sorted(grids):
        xy = np.asarray(grids[level], dtype=np.float64)
        sizes.append(len(xy))
        lab = np.full(len(xy), -1, dtype=np.int64)
        box = np.zeros((len(xy), 4))
        if len(gt_boxes):
            x, y = xy[:, 0:1], xy[:, 1:2]
            off = np.stack([x - gt_boxes[:, 0], y - gt_boxes[:, 1], gt_boxes[:, 2] - x, gt_boxes[:, 3] - y],
                           axis=2)  # (L, G, 4)
            lo, hi = ranges[level]
            reach = off.max(axis=2)
            ok = (off.min(axis=2) > 0) & (reach > lo) & (reach <= hi)
            cand_area = np.where(ok, areas[None, :], INF)
            best = np.argmin(cand_area, axis=1)
            pos = ok.any(axis=1)
            lab[pos] = gt_labels[best[pos]]
            box[pos] = off[np.nonzero(pos)[0], best[pos]]
        labels.append(lab)
        boxes.append(box)
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    boxes = np.concatenate(boxes) if boxes else np.zeros((0, 4))
    ctr = np.zeros(len(labels))
    pos = labels >= 0
    if pos.any():
        ctr[pos] = centerness_target(*boxes[pos].T)
    return LocationTargets(labels, boxes, ctr, tuple(sizes))


def focal_loss(logits: Tensor, labels, alpha: Optional[float] = 0.25, gamma: float = 2.0,
               normalizer: Optional[float] = None) -> Tensor:
    """Sigmoid focal loss over M x K logits, normalized by the positive count (at least 1)."""
    labels = np.asarray(labels)
    if normalizer is None:
        normalizer = max(float(np.sum(labels >= 0)), 1.0)
    return ops.sigmoid_focal_loss(logits, labels, alpha, gamma, normalizer)


def iou_loss(pred: Tensor, target, weights=None) -> Tensor:
    return ops.iou_loss(pred, target, weights)


def bce_loss(logits: Tensor, targets, weights=None) -> Tensor:
    return ops.bce_with_logits(logits, targets, weights)


def zero_loss() -> Tensor:
    return Tensor(np.zeros(()))


def mask_target(roi_box, gt_mask: np.ndarray, size: int = 28) -> np.ndarray:
    """Crop a full-image binary mask to the RoI, resize bilinearly to size x size, binarize at 0.5."""
    x1, y1, x2, y2 = (float(v) for v in roi_box)
    m = np.asarray(gt_mask, dtype=np.float64)
    h, w = m.shape
    frac = (np.arange(size) + 0.5) / size
    # pixel (r, c) is the point (c + 0.5, r + 0.5)
    xs = x1 + frac * (x2 - x1) - 0.5
    ys = y1 + frac * (y2 - y1) - 0.5
    inside_x = (xs >= -0.5) & (xs <= w - 0.5)
    inside_y = (ys >= -0.5) & (ys <= h - 0.5)
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1i = np.minimum(x0 + 1, w - 1)
    y1i = np.minimum(y0 + 1, h - 1)
    ax = (xs - x0)[None, :]
    ay = (ys - y0)[:, None]
    top = m[y0][:, x0] * (1 - ax) + m[y0][:, x1i] * ax
    bot = m[y1i][:, x0] * (1 - ax) + m[y1i][:, x1i] * ax
    val = top * (1 - ay) + bot * ay
    val *= inside_y[:, None] & inside_x[None, :]
    return (val >= 0.5).astype(np.float32)


def mask_iou(pred_binary: np.ndarray, target_binary: np.ndarray) -> float:
    p = np.asarray(pred_binary, dtype=bool)
    t = np.asarray(target_binary, dtype=bool)
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def maskiou_loss(predicted: Tensor, measured) -> Tensor:
    """Mean squared error between predicted and measured mask IoU."""
    return ops.mse(predicted, measured)


def total_loss(parts: Sequence[Tensor]) -> Tensor:
    """Unweighted sum of scalar loss terms."""
    for p in parts:
        if p.size != 1 or not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"loss term {p!r} is not a finite scalar")
    parts = [ops.reshape(p, ()) if p.shape != () else p for p in parts]
    return ops.add_all(parts)
