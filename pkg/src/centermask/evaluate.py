"""Run-length mask coding and a small COCO-style average-precision evaluator."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional, Sequence

import numpy as np

from .head import box_iou

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run lengths, starting with the count of zeros (possibly 0)."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    h, w = np.asarray(mask).shape
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w:
        raise ValueError(f"run lengths sum to {counts.sum()}, expected {h * w}")
    values = np.arange(len(counts)) % 2
    return np.repeat(values, counts).astype(np.uint8).reshape(h, w)


def mask_iou_matrix(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    fa = np.array([np.asarray(m, dtype=bool).ravel() for m in a], dtype=np.float64)
    fb = np.array([np.asarray(m, dtype=bool).ravel() for m in b], dtype=np.float64)
    inter = fa @ fb.T
    union = fa.sum(1)[:, None] + fb.sum(1)[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """Area under the precision envelope for detections already sorted by score."""
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    # envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _match(ious: np.ndarray, thr: float) -> np.ndarray:
    """Greedy matching of score-ordered predictions (rows) to truths (columns)."""
    taken = np.zeros(ious.shape[1], dtype=bool)
    tp = np.zeros(ious.shape[0])
    for i in range(ious.shape[0]):
        cand = np.where(taken, -1.0, ious[i])
        if cand.size == 0:
            continue
        j = int(np.argmax(cand))
        if cand[j] >= thr:
            taken[j] = True
            tp[i] = 1
    return tp


def evaluate_ap(results: Sequence[dict], ground_truth: dict, iou_thresholds: Optional[Sequence[float]] = None,
                kinds: Sequence[str] = ("box", "mask")) -> dict:
    """Per-class and mean AP for boxes and masks.

    ``results`` is a list of result records; ``ground_truth`` is a dataset
    dict with ``images`` and ``annotations``. Box AP ranks by ``box_score``
    when a record carries one, mask AP by ``score``.
    """
    thresholds = tuple(COCO_THRESHOLDS if iou_thresholds is None else iou_thresholds)
    if "images" not in ground_truth or "annotations" not in ground_truth:
        raise ValueError("ground truth needs 'images' and 'annotations'")
    image_ids = {img["id"] for img in ground_truth["images"]}
    for r in results:
        if r["image_id"] not in image_ids:
            raise ValueError(f"result refers to unknown image id {r['image_id']!r}")
    gts = defaultdict(list)
    for a in ground_truth["annotations"]:
        if a["image_id"] not in image_ids:
            raise ValueError(f"annotation refers to unknown image id {a['image_id']!r}")
        gts[(a["image_id"], a["label"])].append(a)
    preds = defaultdict(list)
    for idx, r in enumerate(results):
        preds[r["label"]].append((idx, r))
    labels = sorted({lab for _, lab in gts} | set(preds))
    table: dict = {}
    for kind in kinds:
        per_class = {}
        for lab in labels:
            n_gt = sum(len(v) for (img, l), v in gts.items() if l == lab)
            score_key = "box_score" if kind == "box" else "score"
            plist = sorted(preds.get(lab, []), key=lambda t: (-t[1].get(score_key, t[1]["score"]), t[0]))
            by_image = defaultdict(list)
            for rank, (_, r) in enumerate(plist):
                by_image[r["image_id"]].append(rank)
            aps = []
            for thr in thresholds:
                tp = np.zeros(len(plist))
                for img, ranks in by_image.items():
                    truths = gts.get((img, lab), [])
                    if not truths:
                        continue
                    if kind == "box":
                        ious = box_iou(np.array([plist[k][1]["box"] for k in ranks]),
                                       np.array([t["box"] for t in truths]))
                    else:
                        ious = mask_iou_matrix([rle_decode(plist[k][1]["mask"]) for k in ranks],
                                               [rle_decode(t["mask"]) for t in truths])
                    tp[ranks] = _match(ious, thr)
                aps.append(average_precision(tp, n_gt))
            per_class[lab] = aps
        valid = [v for v in per_class.values() if not np.isnan(v[0])]
        per_thr = np.mean(valid, axis=0) if valid else np.zeros(len(thresholds))
        table[kind] = {
            "thresholds": [float(t) for t in thresholds],
            "per_class": {str(k): [float(x) for x in v] for k, v in per_class.items()},
            "per_threshold": [float(x) for x in per_thr],
            "AP": float(np.mean(per_thr)),
        }
    return table


def format_table(table: dict) -> str:
    lines = []
    for kind, t in table.items():
        thr = t["thresholds"]
        head = "  ".join(f"{x:.2f}" for x in thr)
        lines.append(f"{kind:5s} AP={t['AP']:.4f}   @ {head}")
        lines.append("       mean      " + "  ".join(f"{x:.2f}" for x in t["per_threshold"]))
        for lab, aps in t["per_class"].items():
            lines.append(f"       class {lab:3s} " + "  ".join("  nan" if np.isnan(x) else f"{x:.2f}" for x in aps))
    return "\n".join(lines)
