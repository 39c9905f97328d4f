"""Anchor-free detection head: towers, location grid, box decoding and NMS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .nn import Conv, Module
from .tensor import Tensor, parameter

LEVELS = (3, 4, 5, 6, 7)


@dataclass(frozen=True)
class HeadConfig:
    tower_depth: int = 4
    tower_channels: int = 256
    class_count: int = 3
    score_threshold: float = 0.03
    nms_iou: float = 0.6
    max_detections_train: int = 100
    max_detections_infer: int = 50
    pre_nms_top_k: int = 1000
    sqrt_score: bool = False
    centerness_before_nms: bool = True
    location_offset: float = 0.5
    prior_prob: float = 0.01

    def __post_init__(self):
        if not 0 < self.score_threshold < 1:
            raise ValueError("score_threshold must be in (0, 1)")
        if not 0 < self.nms_iou < 1:
            raise ValueError("nms_iou must be in (0, 1)")
        if self.max_detections_train < 1 or self.max_detections_infer < 1:
            raise ValueError("detection budgets must be positive")


@dataclass
class Detections:
    """Struct-of-arrays detection list for one image."""

    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    centerness: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cls_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.scores)

    def take(self, index) -> "Detections":
        index = np.asarray(index, dtype=np.int64)
        return Detections(self.boxes[index], self.scores[index], self.labels[index],
                          self.levels[index], self.centerness[index], self.cls_scores[index])

    @staticmethod
    def concat(parts) -> "Detections":
        parts = list(parts)
        if not parts:
            return Detections()
        return Detections(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("boxes", "scores", "labels", "levels", "centerness", "cls_scores")))


class FCOSHead(Module):
    """Shared classification and box towers applied to every pyramid level."""

    def __init__(self, rng: np.random.Generator, in_channels: int, cfg: HeadConfig):
        self.cfg = cfg
        self.in_channels = in_channels
        ch = cfg.tower_channels
        widths = [in_channels] + [ch] * cfg.tower_depth
        self.cls_tower = [Conv(rng, widths[i], ch, 3) for i in range(cfg.tower_depth)]
        self.box_tower = [Conv(rng, widths[i], ch, 3) for i in range(cfg.tower_depth)]
        prior_bias = -np.log((1 - cfg.prior_prob) / cfg.prior_prob)
        self.cls_logits = Conv(rng, widths[-1], cfg.class_count, 3, std=0.01, bias_init=prior_bias)
        self.box_pred = Conv(rng, widths[-1], 4, 3, std=0.01)
        self.centerness = Conv(rng, widths[-1], 1, 3, std=0.01)
        self.scales = [parameter(np.ones(1)) for _ in LEVELS]

    def __call__(self, p: Tensor, level: int):
        """Returns (cls logits N x K x H x W, centerness logits N x 1 x H x W, offsets N x 4 x H x W)."""
        if p.shape[1] != self.in_channels:
            raise ValueError(f"head expects {self.in_channels} channels, got {p.shape[1]}")
        c = p
        for conv in self.cls_tower:
            c = ops.relu(conv(c))
        b = p
        for conv in self.box_tower:
            b = ops.relu(conv(b))
        stride = 2.0 ** level
        raw = ops.mul_scalar(self.box_pred(b), self.scales[LEVELS.index(level)])
        offsets = ops.scale(ops.exp(raw), stride)
        return self.cls_logits(c), self.centerness(b), offsets


def head_forward(p: Tensor, level: int, head: FCOSHead):
    return head(p, level)


def location_grid(level: int, h: int, w: int, offset: float = 0.5) -> np.ndarray:
    """Image coordinates (x, y) of every cell of a level, row-major, shape (H*W, 2)."""
    if not 3 <= level <= 7:
        raise ValueError(f"level must be in [3, 7], got {level}")
    s = 2 ** level
    xs = offset * s + np.arange(w) * s
    ys = offset * s + np.arange(h) * s
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def decode_level(cls_logits: np.ndarray, ctr_logits: np.ndarray, offsets: np.ndarray, grid: np.ndarray,
                 level: int, image_hw: tuple, cfg: HeadConfig) -> Detections:
    """Decode one image's raw outputs (K x H x W, 1 x H x W, 4 x H x W) at one level."""
    k = cls_logits.shape[0]
    p_cls = _sigmoid(cls_logits.reshape(k, -1).T)  # (HW, K)
    p_ctr = _sigmoid(ctr_logits.reshape(-1))
    off = offsets.reshape(4, -1).T.astype(np.float64)
    if cfg.centerness_before_nms:
        scores = p_cls * p_ctr[:, None]
        if cfg.sqrt_score:
            scores = np.sqrt(scores)
    else:
        scores = p_cls
    loc, cls = np.nonzero(scores >= cfg.score_threshold)
    s = scores[loc, cls]
    if s.size > cfg.pre_nms_top_k:
        order = np.argsort(-s, kind="stable")[: cfg.pre_nms_top_k]
        loc, cls, s = loc[order], cls[order], s[order]
    xy = grid[loc]
    o = off[loc]
    boxes = np.stack([xy[:, 0] - o[:, 0], xy[:, 1] - o[:, 1], xy[:, 0] + o[:, 2], xy[:, 1] + o[:, 3]], axis=1)
    h, w = image_hw
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0, w)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0, h)
    return Detections(boxes, s, cls.astype(np.int64), np.full(s.size, level, dtype=np.int64),
                      p_ctr[loc], p_cls[loc, cls])


def decode_detections(outputs: dict, image_hw: tuple, cfg: HeadConfig, budget: int) -> Detections:
    """Decode, threshold and suppress one image's outputs.

    ``outputs`` maps level -> (cls K x H x W, ctr 1 x H x W, offsets 4 x H x W) arrays.
    """
    parts = []
    for level, (cls, ctr, off) in sorted(outputs.items()):
        grid = location_grid(level, cls.shape[1], cls.shape[2], cfg.location_offset)
        parts.append(decode_level(cls, ctr, off, grid, level, image_hw, cfg))
    dets = Detections.concat(parts)
    dets = nms(dets, cfg.nms_iou, budget)
    if not cfg.centerness_before_nms:
        scores = dets.scores * dets.centerness
        if cfg.sqrt_score:
            scores = np.sqrt(scores)
        order = np.argsort(-scores, kind="stable")
        dets = dets.take(order)
        dets.scores = scores[order]
    return dets


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (M, 4) and (N, 4) boxes in x1, y1, x2, y2 form."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, labels: np.ndarray, iou: float, budget: int) -> np.ndarray:
    """Greedy class-wise suppression; returns kept indices by descending score."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    order = np.argsort(-np.asarray(scores), kind="stable")
    if order.size == 0:
        return order.astype(np.int64)
    ious = box_iou(boxes[order], boxes[order])
    same = labels[order][:, None] == labels[order][None, :]
    suppressed = np.zeros(order.size, dtype=bool)
    keep = []
    for i in range(order.size):
        if suppressed[i]:
            continue
        keep.append(order[i])
        if len(keep) == budget:
            break
        suppressed |= same[i] & (ious[i] > iou)
    return np.asarray(keep, dtype=np.int64)


def nms(dets: Detections, iou: float, budget: int) -> Detections:
    return dets.take(nms_indices(dets.boxes, dets.scores, dets.labels, iou, budget))
