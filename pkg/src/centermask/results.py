"""Result records, dataset dictionaries and batched model evaluation."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .evaluate import evaluate_ap, rle_encode
from .model import CenterMask
from .synth import CLASS_NAMES, SceneSample, generate_sample
from .tensor import Tensor


def result_records(image_id, instances) -> list:
    return [{
        "image_id": image_id,
        "label": int(inst.label),
        "box": [float(v) for v in inst.box],
        "score": float(inst.recalibrated_score),
        "box_score": float(inst.score),
        "mask": rle_encode(inst.mask),
    } for inst in instances]


def dataset_dict(samples: Sequence[SceneSample], file_names: Sequence[str] = ()) -> dict:
    images, anns = [], []
    for k, s in enumerate(samples):
        h, w = s.pixels.shape[:2]
        img = {"id": int(s.seed), "height": int(h), "width": int(w)}
        if file_names:
            img["file_name"] = file_names[k]
        images.append(img)
        for inst in s.instances:
            anns.append({"id": len(anns), "image_id": int(s.seed), "label": int(inst.label),
                         "box": [float(v) for v in inst.box], "mask": rle_encode(inst.mask)})
    return {"images": images, "annotations": anns,
            "categories": [{"id": i, "name": n} for i, n in enumerate(CLASS_NAMES)]}


def predict_samples(model: CenterMask, samples: Sequence[SceneSample], batch_size: int = 8) -> list:
    records = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = Tensor(np.stack([s.image for s in chunk]))
        for s, inst in zip(chunk, model.predict(images)):
            records.extend(result_records(int(s.seed), inst))
    return records


def evaluate_on_seeds(model: CenterMask, seeds: Iterable[int], size: int = 64, max_instances: int = 5,
                      iou_thresholds=None) -> dict:
    samples = [generate_sample(int(s), size, size, max_instances) for s in seeds]
    return evaluate_ap(predict_samples(model, samples), dataset_dict(samples), iou_thresholds)
