"""Spatial-attention-guided mask branch and mask scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv, Linear, Module, he_normal
from .tensor import Tensor, parameter


@dataclass(frozen=True)
class AssignConfig:
    k0: int = 4
    canonical: int = 224
    k_min: int = 3
    k_max: int = 5
    adaptive: bool = True

    def __post_init__(self):
        if not 3 <= self.k_min <= self.k_max <= 7:
            raise ValueError("need 3 <= k_min <= k_max <= 7")


@dataclass(frozen=True)
class MaskConfig:
    conv_depth: int = 4
    conv_channels: int = 256
    roi_size: int = 14
    sampling: int = 2
    maskiou_convs: int = 4
    maskiou_fc: int = 1024
    mask_scoring: bool = True
    paste_threshold: float = 0.5
    assign: AssignConfig = AssignConfig()


def assign_level_canonical(w: float, h: float, cfg: AssignConfig = AssignConfig()) -> int:
    """floor(k0 + log2(sqrt(w h) / 224)), clamped to [k_min, k_max]."""
    if w <= 0 or h <= 0:
        raise ValueError("RoI extents must be positive")
    k = math.floor(cfg.k0 + math.log2(math.sqrt(w * h) / cfg.canonical))
    return int(min(max(k, cfg.k_min), cfg.k_max))


def assign_level_adaptive(w: float, h: float, input_area: float, cfg: AssignConfig = AssignConfig()) -> int:
    """ceil(k_max - log2(A_input / A_roi)), clamped to [k_min, k_max]."""
    if w <= 0 or h <= 0 or input_area <= 0:
        raise ValueError("areas must be positive")
    k = math.ceil(cfg.k_max - math.log2(input_area / (w * h)))
    return int(min(max(k, cfg.k_min), cfg.k_max))


def assign_levels(boxes: np.ndarray, input_area: float, cfg: AssignConfig) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = np.empty(len(boxes), dtype=np.int64)
    for i, (x1, y1, x2, y2) in enumerate(boxes):
        w, h = max(x2 - x1, 1e-6), max(y2 - y1, 1e-6)
        out[i] = assign_level_adaptive(w, h, input_area, cfg) if cfg.adaptive else assign_level_canonical(w, h, cfg)
    return out


def roi_align_pyramid(pyramid: dict, boxes: np.ndarray, batch_index, levels, out_size: int = 14,
                      sampling: int = 2) -> Tensor:
    """Pool each box from its assigned level; result rows follow the input order.

    Boxes are in image pixels. Level-k cell (i, j) covers image pixels around
    ((j + 0.5) 2^k, (i + 0.5) 2^k), so box coordinates map to ``x / 2^k - 0.5``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    batch_index = np.asarray(batch_index, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    parts, order = [], []
    for k in sorted(set(levels.tolist())):
        if k not in pyramid:
            raise KeyError(f"level P{k} missing from pyramid")
        sel = np.nonzero(levels == k)[0]
        fb = boxes[sel] / 2.0 ** k - 0.5
        parts.append(ops.roi_align(pyramid[k], fb, batch_index[sel], out_size, sampling))
        order.append(sel)
    pooled = ops.concat_rows(parts) if len(parts) > 1 else parts[0]
    perm = np.concatenate(order)
    if np.array_equal(perm, np.arange(perm.size)):
        return pooled
    return ops.take_rows(pooled, np.argsort(perm))


def sam_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x * sigmoid(conv3x3([max_c(x), mean_c(x)]))."""
    pooled = ops.concat_channels([ops.reduce_channel(x, "max"), ops.reduce_channel(x, "avg")])
    gate = ops.sigmoid(ops.conv2d(pooled, w, b, stride=1, pad=1))
    return ops.scale_spatial(x, gate)


class SpatialAttention(Module):
    def __init__(self, rng: np.random.Generator):
        self.weight = parameter(he_normal(rng, (1, 2, 3, 3), gain=1.0))
        self.bias = parameter(np.zeros(1))

    def __call__(self, x: Tensor) -> Tensor:
        return sam_forward(x, self.weight, self.bias)


class MaskHead(Module):
    """convs -> SAM -> 2x2 deconv (14 -> 28) -> 1x1 class-specific logits."""

    def __init__(self, rng: np.random.Generator, in_channels: int, class_count: int, cfg: MaskConfig):
        ch = cfg.conv_channels
        widths = [in_channels] + [ch] * cfg.conv_depth
        self.convs = [Conv(rng, widths[i], ch, 3) for i in range(cfg.conv_depth)]
        self.sam = SpatialAttention(rng)
        self.deconv_weight = parameter(he_normal(rng, (widths[-1], ch, 2, 2)) * 0.5)
        self.deconv_bias = parameter(np.zeros(ch))
        self.predictor = Conv(rng, ch, class_count, 1, std=0.001)

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.relu(conv(x))
        x = self.sam(x)
        x = ops.relu(ops.deconv2d_2x2(x, self.deconv_weight, self.deconv_bias))
        return self.predictor(x)


def mask_head_forward(x: Tensor, head: MaskHead) -> Tensor:
    return head(x)


class MaskIoUHead(Module):
    """Regresses the IoU of each predicted class mask from RoI features and the mask."""

    def __init__(self, rng: np.random.Generator, in_channels: int, class_count: int, cfg: MaskConfig,
                 roi_size: int = 14):
        ch = cfg.conv_channels
        n = max(cfg.maskiou_convs, 1)
        widths = [in_channels + 1] + [ch] * n
        # the last conv halves the extent
        self.convs = [Conv(rng, widths[i], ch, 3, stride=2 if i == n - 1 else 1) for i in range(n)]
        side = (roi_size + 2 - 3) // 2 + 1
        self.fc1 = Linear(rng, ch * side * side, cfg.maskiou_fc)
        self.fc2 = Linear(rng, cfg.maskiou_fc, cfg.maskiou_fc)
        self.out = Linear(rng, cfg.maskiou_fc, class_count, std=0.01)

    def __call__(self, roi_features: Tensor, mask_prob: Tensor) -> Tensor:
        """``mask_prob`` is R x 1 x 28 x 28; returns raw R x K estimates."""
        m = ops.max_pool2d(mask_prob, 2, 2)
        x = ops.concat_channels([roi_features, m])
        for conv in self.convs:
            x = ops.relu(conv(x))
        x = ops.relu(self.fc1(ops.flatten(x)))
        x = ops.relu(self.fc2(x))
        return self.out(x)


def maskiou_forward(roi_features: Tensor, mask_prob: Tensor, head: MaskIoUHead) -> Tensor:
    return head(roi_features, mask_prob)


def recalibrate_score(cls_score: float, mask_iou: float) -> float:
    if not (0.0 <= cls_score <= 1.0 and 0.0 <= mask_iou <= 1.0):
        raise ValueError("scores must lie in [0, 1]")
    return cls_score * mask_iou


def _resize_bilinear(grid: np.ndarray, x1: float, y1: float, x2: float, y2: float,
                     rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample an M x M grid stretched over a box at the given pixel centres."""
    m_h, m_w = grid.shape
    u = (cols + 0.5 - x1) / (x2 - x1) * m_w - 0.5
    v = (rows + 0.5 - y1) / (y2 - y1) * m_h - 0.5
    u = np.clip(u, 0, m_w - 1)
    v = np.clip(v, 0, m_h - 1)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    u1 = np.minimum(u0 + 1, m_w - 1)
    v1 = np.minimum(v0 + 1, m_h - 1)
    au = (u - u0)[None, :]
    av = (v - v0)[:, None]
    top = grid[v0][:, u0] * (1 - au) + grid[v0][:, u1] * au
    bot = grid[v1][:, u0] * (1 - au) + grid[v1][:, u1] * au
    return top * (1 - av) + bot * av


def paste_mask(logits: np.ndarray, box, image_hw: tuple, threshold: float = 0.5) -> np.ndarray:
    """Resize a mask logit grid into its box on an H x W canvas and binarize."""
    h, w = image_hw
    canvas = np.zeros((h, w), dtype=np.uint8)
    x1, y1, x2, y2 = (float(v) for v in box)
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return canvas
    c0, c1 = max(int(math.floor(x1)), 0), min(int(math.ceil(x2)), w)
    r0, r1 = max(int(math.floor(y1)), 0), min(int(math.ceil(y2)), h)
    cols = np.arange(c0, c1)
    rows = np.arange(r0, r1)
    # only pixels whose centre lies inside the box
    cols = cols[(cols + 0.5 > x1) & (cols + 0.5 < x2)]
    rows = rows[(rows + 0.5 > y1) & (rows + 0.5 < y2)]
    if cols.size == 0 or rows.size == 0:
        return canvas
    prob = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    patch = _resize_bilinear(prob, x1, y1, x2, y2, rows, cols)
    canvas[np.ix_(rows, cols)] = patch >= threshold
    return canvas
