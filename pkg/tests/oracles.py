"""Scalar reference implementations written straight from the definitions."""

import math

import numpy as np

from centermask.losses import DEFAULT_RANGES


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for a in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[a, ci, i * stride + u, j * stride + v] * w[o, ci, u, v]
                    out[a, o, i, j] = acc
    return out


def naive_fc(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for o in range(w.shape[0]):
            out[i, o] = b[o] + sum(x[i, c] * w[o, c] for c in range(x.shape[1]))
    return out


def naive_bilinear(img, px, py):
    h, w = img.shape
    px = min(max(px, 0), w - 1)
    py = min(max(py, 0), h - 1)
    x0, y0 = int(np.floor(px)), int(np.floor(py))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    ax, ay = px - x0, py - y0
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
            + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))


def naive_roi_align(fmap, box, out_size, sampling):
    """C x out x out: each bin averages sampling^2 bilinear samples at sub-bin centres."""
    c = fmap.shape[0]
    x1, y1, x2, y2 = box
    bw, bh = (x2 - x1) / out_size, (y2 - y1) / out_size
    out = np.zeros((c, out_size, out_size))
    for ch in range(c):
        for i in range(out_size):
            for j in range(out_size):
                acc = 0.0
                for u in range(sampling):
                    for v in range(sampling):
                        py = y1 + i * bh + (u + 0.5) * bh / sampling
                        px = x1 + j * bw + (v + 0.5) * bw / sampling
                        acc += naive_bilinear(fmap[ch], px, py)
                out[ch, i, j] = acc / sampling ** 2
    return out


def scalar_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def reference_nms(boxes, scores, labels, thr, budget):
    """Quadratic greedy suppression; ties keep the earlier index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(labels[j] != labels[i] or scalar_iou(boxes[i], boxes[j]) <= thr for j in kept):
            kept.append(i)
            if len(kept) == budget:
                break
    return kept


def reference_assign(boxes, labels, level, xy):
    """(label, offsets) for one location: smallest containing box whose reach fits the level."""
    lo, hi = DEFAULT_RANGES[level]
    best_area, best = math.inf, None
    for g, (x1, y1, x2, y2) in enumerate(boxes):
        off = (xy[0] - x1, xy[1] - y1, x2 - xy[0], y2 - xy[1])
        if min(off) <= 0 or not (lo < max(off) <= hi):
            continue
        area = (x2 - x1) * (y2 - y1)
        if area < best_area:
            best_area, best = area, g
    if best is None:
        return -1, (0, 0, 0, 0)
    x1, y1, x2, y2 = boxes[best]
    return labels[best], (xy[0] - x1, xy[1] - y1, x2 - xy[0], y2 - xy[1])


def random_nms_scene(rng, n=50):
    xy = rng.uniform(0, 100, size=(n, 2))
    wh = rng.uniform(5, 40, size=(n, 2))
    boxes = np.concatenate([xy, xy + wh], axis=1)
    # coarse scores so equal-score ties occur
    return boxes, np.round(rng.uniform(0, 1, size=n), 2), rng.integers(0, 3, size=n)


def random_assign_scene(rng, size):
    n = int(rng.integers(0, 6))
    xy = rng.uniform(0, size - 4, size=(n, 2))
    wh = rng.uniform(4, size, size=(n, 2))
    boxes = np.round(np.concatenate([xy, np.minimum(xy + wh, size)], axis=1))
    return boxes, rng.integers(0, 3, size=n)
