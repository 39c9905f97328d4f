"""Per-stage wall time and multiply-accumulate counts for one configuration."""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from . import profile
from .config import CenterMaskConfig
from .model import CenterMask
from .tensor import Tensor, no_record

STAGES = ("backbone", "fpn", "heads", "mask")


def bench_rois(size: int, count: int, seed: int = 0) -> np.ndarray:
    """A fixed spread of boxes standing in for the detector's output."""
    rng = np.random.default_rng(seed)
    wh = rng.uniform(size / 8, size / 2, size=(count, 2))
    xy = rng.uniform(0, 1, size=(count, 2)) * (size - wh)
    return np.concatenate([xy, xy + wh], axis=1)


def _forward(model: CenterMask, image: Tensor, rois: np.ndarray) -> None:
    h, w = image.shape[2:]
    with no_record():
        pyramid = model.pyramid(image)
        model.head_outputs(pyramid)
        feats, logits, _ = model.mask_logits(pyramid, rois, np.zeros(len(rois), dtype=np.int64), h * w)
        if model.maskiou_head is not None:
            with profile.stage("mask"):
                model.maskiou_head(feats, Tensor(logits.data[:, :1]))


def run_bench(cfg: CenterMaskConfig, size: int = 128, repetitions: int = 5, seed: int = 0,
              rois: Optional[int] = None) -> dict:
    """Time ``repetitions`` forward passes on one ``size`` x ``size`` image.

    The mask stage runs on ``rois`` fixed boxes (the inference budget by
    default) so its cost does not depend on what an untrained detector finds.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    model = CenterMask(cfg, seed)
    image = Tensor(np.random.default_rng(seed).normal(size=(1, 3, size, size)))
    boxes = bench_rois(size, cfg.head.max_detections_infer if rois is None else rois, seed)
    samples = {s: [] for s in STAGES}
    macs = None
    walls = []
    for _ in range(repetitions):
        with profile.counting() as c:
            t0 = time.perf_counter()
            _forward(model, image, boxes)
            walls.append(time.perf_counter() - t0)
        for s in STAGES:
            samples[s].append(c.seconds.get(s, 0.0))
        macs = {s: c.macs.get(s, 0) for s in STAGES}
    stats = {s: {"median": float(np.median(v)), "p95": float(np.percentile(v, 95)), "samples": v}
             for s, v in samples.items()}
    return {"size": size, "repetitions": repetitions, "rois": len(boxes), "stages": stats,
            "total": {"median": float(np.median(walls)), "p95": float(np.percentile(walls, 95)), "samples": walls},
            "macs": macs, "total_macs": int(sum(macs.values())),
            "parameters": int(sum(p.data.size for _, p in model.named_parameters()))}


def format_report(name: str, report: dict) -> str:
    lines = [f"{name}: {report['size']}x{report['size']}, {report['repetitions']} reps, "
             f"{report['rois']} mask RoIs, {report['parameters']:,} parameters"]
    for s in STAGES:
        st = report["stages"][s]
        lines.append(f"  {s:9s} median {st['median'] * 1e3:9.2f} ms  p95 {st['p95'] * 1e3:9.2f} ms  "
                     f"{report['macs'][s] / 1e6:10.2f} MMAC")
    t = report["total"]
    lines.append(f"  {'total':9s} median {t['median'] * 1e3:9.2f} ms  p95 {t['p95'] * 1e3:9.2f} ms  "
                 f"{report['total_macs'] / 1e6:10.2f} MMAC")
    return "\n".join(lines)
