"""Forward operators with their backward rules.

Every operator takes and returns :class:`Tensor` objects. When a tape is
active and an input requires a gradient, the operator records a closure that
maps the output gradient to input gradients. Shapes are always explicit: the
only implicit broadcast is a per-channel bias.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, branch, make_result
from . import profile as _profile


def _check_4d(x: Tensor, what: str = "x") -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{what} must be N x C x H x W, got shape {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an N x C x H x W input with a C' x C x kh x kw kernel.

    Output extents follow ``(H + 2*pad - kh) // stride + 1``.
    """
    _check_4d(x)
    if w.data.ndim != 4:
        raise ValueError(f"conv2d weight must be C' x C x kh x kw, got {w.shape}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    if b is not None and b.shape != (co,):
        raise ValueError(f"conv2d bias must have shape ({co},), got {b.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {h}x{wd}")

    xd = x.data
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        cols = xd.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = w.data.reshape(co, -1)
    out = cols @ wm.T
    if b is not None:
        out += b.data
    _profile.add_macs(cols.shape[0] * cols.shape[1] * co)
    y = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
        dw = (gm.T @ cols).reshape(w.shape) if w.requires_grad else None
        db = gm.sum(axis=0) if (b is not None and b.requires_grad) else None
        dx = None
        if x.requires_grad:
            dcols = gm @ wm
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                dx = dcols.reshape(n, h, wd, c).transpose(0, 3, 1, 2)
            else:
                dc = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                            j : j + stride * (wo - 1) + 1 : stride] += dc[:, :, i, j]
                dx = dxp[:, :, pad : pad + h, pad : pad + wd]
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w, b) if b is not None else (x, w)
    return make_result(y, inputs, backward)


def deconv2d_2x2(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Stride-2 transposed convolution with a C x C' x 2 x 2 kernel; doubles H and W."""
    _check_4d(x)
    n, c, h, wd = x.shape
    if w.data.ndim != 4 or w.shape[0] != c or w.shape[2:] != (2, 2):
        raise ValueError(f"deconv2d_2x2 weight must be {c} x C' x 2 x 2, got {w.shape}")
    co = w.shape[1]
    if b is not None and b.shape != (co,):
        raise ValueError(f"deconv2d_2x2 bias must have shape ({co},), got {b.shape}")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wm = w.data.reshape(c, co * 4)
    out = (xm @ wm).reshape(n, h, wd, co, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, co, 2 * h, 2 * wd)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)
    _profile.add_macs(xm.shape[0] * c * co * 4)

    def backward(g):
        gm = g.reshape(n, co, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, co * 4)
        dx = (gm @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2) if x.requires_grad else None
        dw = (xm.T @ gm).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, w, b) if b is not None else (x, w)
    return make_result(out, inputs, backward)


def reduce_channel(x: Tensor, mode: str) -> Tensor:
    """Per-pixel max or mean across channels, giving N x 1 x H x W."""
    _check_4d(x)
    c = x.shape[1]
    if mode == "max":
        arg = branch(np.argmax(x.data, axis=1)[:, None])
        out = np.take_along_axis(x.data, arg, axis=1)

        def backward(g):
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, arg, g, axis=1)
            return (dx,)

    elif mode == "avg":
        out = x.data.mean(axis=1, keepdims=True)

        def backward(g):
            return (np.broadcast_to(g / c, x.shape).copy(),)

    else:
        raise ValueError(f"unknown reduce_channel mode {mode!r}")
    return make_result(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x)
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / hw, x.shape).copy(),)

    return make_result(out, (x,), backward)


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map of an N x C input by a C' x C weight."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"fully_connected shape mismatch: x {x.shape}, w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"fully_connected bias must have shape ({w.shape[0]},), got {b.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    _profile.add_macs(x.shape[0] * w.shape[0] * w.shape[1])

    def backward(g):
        dx = g @ w.data if x.requires_grad else None
        dw = g.T @ x.data if w.requires_grad else None
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    inputs = (x, w, b) if b is not None else (x, w)
    return make_result(out, inputs, backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0, -z)).astype(z.dtype, copy=False)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        out = _sigmoid(x.data)

        def backward(g):
            return (g * out * (1 - out),)

    elif kind == "relu":
        active = branch(x.data > 0)
        out = np.where(active, x.data, 0)

        def backward(g):
            return (g * active,)

    else:
        raise ValueError(f"unknown activation {kind!r}")
    return make_result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_result(out, (x,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    for t in xs:
        _check_4d(t)
        if t.shape[0] != xs[0].shape[0] or t.shape[2:] != xs[0].shape[2:]:
            raise ValueError(f"concat_channels extent mismatch: {t.shape} vs {xs[0].shape}")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return make_result(out, tuple(xs), backward)


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the leading axis (batch for feature maps)."""
    if not xs:
        raise ValueError("concat_rows needs at least one input")
    splits = np.cumsum([t.shape[0] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=0)

    def backward(g):
        return tuple(np.split(g, splits, axis=0))

    return make_result(out, tuple(xs), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows of ``x`` along the leading axis."""
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, index, g)
        return (dx,)

    return make_result(out, (x,), backward)


def select_channel(x: Tensor, channels) -> Tensor:
    """Pick one channel per batch entry: R x K x H x W -> R x 1 x H x W."""
    _check_4d(x)
    channels = np.asarray(channels, dtype=np.int64)
    if channels.shape != (x.shape[0],):
        raise ValueError("select_channel needs one channel index per batch entry")
    rows = np.arange(x.shape[0])
    out = x.data[rows, channels][:, None]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[rows, channels] = g[:, 0]
        return (dx,)

    return make_result(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    out = a.data + b.data

    def backward(g):
        return g, g

    return make_result(out, (a, b), backward)


def add_all(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise ValueError("add_all needs at least one tensor")
    for t in ts:
        if t.shape != ts[0].shape:
            raise ValueError(f"add_all needs equal shapes, got {t.shape} and {ts[0].shape}")
    out = sum((t.data for t in ts[1:]), ts[0].data.copy())

    def backward(g):
        return tuple(g for _ in ts)

    return make_result(out, tuple(ts), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    out = x.data * factor

    def backward(g):
        return (g * factor,)

    return make_result(out, (x,), backward)


def mul_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable single-element tensor."""
    if s.size != 1:
        raise ValueError("mul_scalar needs a single-element scale")
    sv = s.data.reshape(())
    out = x.data * sv

    def backward(g):
        return g * sv, np.reshape(np.sum(g * x.data), s.shape)

    return make_result(out, (x, s), backward)


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply an N x C x H x W map by an N x C x 1 x 1 gate."""
    _check_4d(x)
    if gate.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ValueError(f"channel gate must be {x.shape[:2] + (1, 1)}, got {gate.shape}")
    out = x.data * gate.data

    def backward(g):
        return g * gate.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    return make_result(out, (x, gate), backward)


def scale_spatial(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply an N x C x H x W map by an N x 1 x H x W gate."""
    _check_4d(x)
    if gate.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ValueError(f"spatial gate must be {(x.shape[0], 1) + x.shape[2:]}, got {gate.shape}")
    out = x.data * gate.data

    def backward(g):
        return g * gate.data, (g * x.data).sum(axis=1, keepdims=True)

    return make_result(out, (x, gate), backward)


def max_pool2d(x: Tensor, kernel: int, stride: int, pad: int = 0) -> Tensor:
    """Max pooling with -inf padding; gradient goes to the first maximum of each window."""
    _check_4d(x)
    n, c, h, wd = x.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (wd + 2 * pad - kernel) // stride + 1
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    win = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = branch(np.argmax(win, axis=-1))
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
        for k in range(kernel * kernel):
            i, j = divmod(k, kernel)
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride] += np.where(arg == k, g, 0)
        return (dxp[:, :, pad : pad + h, pad : pad + wd],)

    return make_result(out, (x,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_4d(x)
    n, c, h, wd = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, wd, 2).sum(axis=(3, 5)),)

    return make_result(out, (x,), backward)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` window of a feature map."""
    _check_4d(x)
    out = x.data[:, :, :height, :width]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, :, :height, :width] = g
        return (dx,)

    return make_result(out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def to_rows(x: Tensor) -> Tensor:
    """N x C x H x W -> (N*H*W) x C, one row per spatial location."""
    _check_4d(x)
    n, c, h, wd = x.shape
    out = x.data.transpose(0, 2, 3, 1).reshape(-1, c)

    def backward(g):
        return (g.reshape(n, h, wd, c).transpose(0, 3, 1, 2),)

    return make_result(out, (x,), backward)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return make_result(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    return scale(total(x), 1.0 / x.size)


def bilinear_sample(x: Tensor, px: float, py: float) -> Tensor:
    """Bilinear interpolation of a 1 x C x H x W map at continuous (px, py).

    Coordinates are clamped to the map border.
    """
    _check_4d(x)
    if x.shape[0] != 1:
        raise ValueError("bilinear_sample expects a single-image map")
    _, c, h, wd = x.shape
    px = min(max(float(px), 0.0), wd - 1.0)
    py = min(max(float(py), 0.0), h - 1.0)
    x0, y0 = int(np.floor(px)), int(np.floor(py))
    x1, y1 = min(x0 + 1, wd - 1), min(y0 + 1, h - 1)
    ax, ay = px - x0, py - y0
    taps = ((y0, x0, (1 - ay) * (1 - ax)), (y0, x1, (1 - ay) * ax),
            (y1, x0, ay * (1 - ax)), (y1, x1, ay * ax))
    d = x.data[0]
    out = sum(wt * d[:, yy, xx] for yy, xx, wt in taps)

    def backward(g):
        dx = np.zeros_like(x.data)
        for yy, xx, wt in taps:
            dx[0, :, yy, xx] += wt * g
        return (dx,)

    return make_result(np.asarray(out, dtype=x.data.dtype), (x,), backward)


def _bilinear_taps(coord: np.ndarray, size: int):
    coord = np.clip(coord, 0.0, size - 1.0)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = coord - lo
    return lo, hi, frac


def roi_align(x: Tensor, boxes: np.ndarray, batch_index, out_size: int = 14, sampling: int = 2) -> Tensor:
    """Pool R boxes (x1, y1, x2, y2 in feature-map units) into R x C x out x out.

    Each output bin averages ``sampling x sampling`` bilinear samples placed at
    regular sub-bin centres. Feature cell (i, j) is treated as the point (j, i).
    """
    _check_4d(x)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    bidx = np.asarray(batch_index, dtype=np.int64).reshape(-1)
    if bidx.shape[0] != boxes.shape[0]:
        raise ValueError("roi_align needs one batch index per box")
    n, c, h, wd = x.shape
    r = boxes.shape[0]
    p = out_size * sampling
    frac = (np.arange(p) + 0.5) / p
    xs = boxes[:, 0:1] + frac[None] * (boxes[:, 2:3] - boxes[:, 0:1])
    ys = boxes[:, 1:2] + frac[None] * (boxes[:, 3:4] - boxes[:, 1:2])
    x0, x1, ax = _bilinear_taps(xs, wd)
    y0, y1, ay = _bilinear_taps(ys, h)
    dt = x.data.dtype
    # (R, P, P) weights and flat indices into an (N*H*W) x C table
    taps = []
    for yy, wy in ((y0, 1 - ay), (y1, ay)):
        for xx, wx in ((x0, 1 - ax), (x1, ax)):
            idx = (bidx[:, None, None] * h + yy[:, :, None]) * wd + xx[:, None, :]
            taps.append((idx, (wy[:, :, None] * wx[:, None, :]).astype(dt)))
    table = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    samples = sum(wt[..., None] * table[idx] for idx, wt in taps)
    out = samples.reshape(r, out_size, sampling, out_size, sampling, c).mean(axis=(2, 4))
    out = out.transpose(0, 3, 1, 2)

    def backward(g):
        gs = np.repeat(np.repeat(g.transpose(0, 2, 3, 1), sampling, axis=1), sampling, axis=2)
        gs = gs / (sampling * sampling)
        dtable = np.zeros((n * h * wd, c), dtype=g.dtype)
        for idx, wt in taps:
            np.add.at(dtable, idx.reshape(-1), (wt[..., None] * gs).reshape(-1, c))
        return (dtable.reshape(n, h, wd, c).transpose(0, 3, 1, 2),)

    return make_result(np.ascontiguousarray(out), (x,), backward)


# --- fused losses -----------------------------------------------------------

def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0, -z)


def sigmoid_focal_loss(logits: Tensor, labels, alpha: Optional[float] = 0.25, gamma: float = 2.0,
                       normalizer: float = 1.0) -> Tensor:
    """Sigmoid focal loss summed over rows and classes, divided by ``normalizer``.

    ``labels`` holds one class index per row, or -1 for background. With
    ``alpha=None`` positives and negatives are weighted equally.
    """
    z = logits.data
    m, k = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    t = np.zeros_like(z)
    pos_rows = np.nonzero(labels >= 0)[0]
    t[pos_rows, labels[pos_rows]] = 1
    p = _sigmoid(z)
    logp = _log_sigmoid(z)
    log1mp = _log_sigmoid(-z)
    a_pos = 1.0 if alpha is None else alpha
    a_neg = 1.0 if alpha is None else 1 - alpha
    loss_pos = -a_pos * (1 - p) ** gamma * logp
    loss_neg = -a_neg * p ** gamma * log1mp
    loss = np.where(t > 0, loss_pos, loss_neg).sum() / normalizer

    def backward(g):
        d_pos = a_pos * (1 - p) ** gamma * (gamma * p * logp - (1 - p))
        d_neg = a_neg * p ** gamma * (p - gamma * (1 - p) * log1mp)
        return (np.where(t > 0, d_pos, d_neg) * (g / normalizer),)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def bce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Binary cross-entropy on logits; mean over entries, or weighted mean."""
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    if t.shape != z.shape:
        raise ValueError(f"bce targets shape {t.shape} does not match logits {z.shape}")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("bce targets must lie in [0, 1]")
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    if weights is None:
        wts = np.full_like(z, 1.0 / z.size)
    else:
        wts = np.asarray(weights, dtype=z.dtype)
        wts = wts / max(float(wts.sum()), 1e-12)
    loss = np.sum(per * wts)

    def backward(g):
        return ((_sigmoid(z) - t) * wts * g,)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def iou_loss(pred: Tensor, target, weights=None) -> Tensor:
    """-ln(IoU) between boxes given as (l, t, r, b) offsets from a shared point.

    Rows are averaged with ``weights`` (uniform when omitted).
    """
    pd = pred.data
    tg = np.asarray(target, dtype=pd.dtype)
    if pd.ndim != 2 or pd.shape[1] != 4 or tg.shape != pd.shape:
        raise ValueError(f"iou_loss needs M x 4 inputs, got {pd.shape} and {tg.shape}")
    if np.any(pd <= 0) or np.any(tg <= 0):
        raise ValueError("iou_loss offsets must be positive")
    m = pd.shape[0]
    wts = np.ones(m, dtype=pd.dtype) if weights is None else np.asarray(weights, dtype=pd.dtype)
    wts = wts / max(float(wts.sum()), 1e-12)
    l, t, r, b = pd.T
    tl, tt, tr, tb = tg.T
    lower = branch(pd <= tg)
    iw = np.where(lower[:, 0], l, tl) + np.where(lower[:, 2], r, tr)
    ih = np.where(lower[:, 1], t, tt) + np.where(lower[:, 3], b, tb)
    inter = iw * ih
    area_p = (l + r) * (t + b)
    union = area_p + (tr + tl) * (tt + tb) - inter
    loss = np.sum(wts * (np.log(union) - np.log(inter)))

    def backward(g):
        # d inter / d offset: the matching min() term times the other extent
        di = np.stack([lower[:, 0] * ih, lower[:, 1] * iw, lower[:, 2] * ih, lower[:, 3] * iw], axis=1)
        dap = np.stack([t + b, l + r, t + b, l + r], axis=1)
        du = dap - di
        d = du / union[:, None] - di / inter[:, None]
        return (d * (wts * g)[:, None],)

    return make_result(np.asarray(loss, dtype=pd.dtype), (pred,), backward)


def mse(pred: Tensor, target) -> Tensor:
    pd = pred.data
    tg = np.asarray(target, dtype=pd.dtype)
    if tg.shape != pd.shape:
        raise ValueError(f"mse shape mismatch: {pd.shape} vs {tg.shape}")
    diff = pd - tg
    loss = np.mean(diff * diff) if pd.size else np.zeros((), pd.dtype)

    def backward(g):
        return (2 * diff / max(pd.size, 1) * g,)

    return make_result(np.asarray(loss, dtype=pd.dtype), (pred,), backward)
