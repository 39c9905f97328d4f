"""The full detector: backbone, pyramid, detection head and mask branch."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops, profile
from .backbone import FPN, VoVNet
from .config import CenterMaskConfig
from .head import LEVELS, FCOSHead, box_iou, decode_detections, location_grid
from .losses import (LocationTargets, bce_loss, fcos_assign_targets, focal_loss, iou_loss, mask_iou,
                     mask_target, maskiou_loss, total_loss, zero_loss)
from .mask import MaskHead, MaskIoUHead, assign_levels, paste_mask, roi_align_pyramid
from .nn import Module
from .tensor import NonFiniteError, Tensor, no_record

LOSS_TERMS = ("cls", "center", "box", "mask", "maskiou")


@contextlib.contextmanager
def _blame(part: str):
    """Prefix non-finite errors raised inside the block with ``part``; the innermost part wins."""
    try:
        yield
    except NonFiniteError as exc:
        if getattr(exc, "part", None):
            raise
        err = NonFiniteError(f"{part}: {exc}")
        err.part = part
        raise err from exc


@dataclass
class InstanceResult:
    box: np.ndarray
    label: int
    score: float  # detection score
    level: int
    mask_logits: np.ndarray  # K x 28 x 28
    mask_iou: np.ndarray  # K predicted IoUs, clamped to [0, 1]
    recalibrated_score: float
    mask: np.ndarray  # H x W uint8


class CenterMask(Module):
    def __init__(self, cfg: CenterMaskConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.backbone = VoVNet(rng, cfg.backbone)
        c3, c4, c5 = self.backbone.out_channels[1:]
        f = cfg.backbone.fpn_channels
        self.fpn = FPN(rng, (c3, c4, c5), f)
        self.head = FCOSHead(rng, f, cfg.head)
        self.mask_head = MaskHead(rng, f, cfg.head.class_count, cfg.mask)
        self.maskiou_head = MaskIoUHead(rng, f, cfg.head.class_count, cfg.mask, cfg.mask.roi_size) \
            if cfg.mask.mask_scoring else None

    # --- shared pieces --------------------------------------------------------

    def pyramid(self, images: Tensor) -> dict:
        with profile.stage("backbone"):
            cs = self.backbone(images)
        with profile.stage("fpn"):
            return self.fpn(cs)

    def head_outputs(self, pyramid: dict) -> dict:
        with profile.stage("heads"):
            return {k: self.head(pyramid[k], k) for k in LEVELS}

    def detect(self, outputs: dict, image_hw: tuple, budget: int) -> list:
        n = next(iter(outputs.values()))[0].shape[0]
        dets = []
        for i in range(n):
            per = {k: (c.data[i], t.data[i], o.data[i]) for k, (c, t, o) in outputs.items()}
            dets.append(decode_detections(per, image_hw, self.cfg.head, budget))
        return dets

    def mask_logits(self, pyramid: dict, boxes: np.ndarray, batch_index, input_area: float):
        """RoI features (R x C x 14 x 14) and mask logits (R x K x 28 x 28)."""
        with profile.stage("mask"):
            levels = assign_levels(boxes, input_area, self.cfg.mask.assign)
            feats = roi_align_pyramid(pyramid, boxes, batch_index, levels, self.cfg.mask.roi_size,
                                      self.cfg.mask.sampling)
            return feats, self.mask_head(feats), levels

    def grids(self, outputs: dict) -> dict:
        return {k: location_grid(k, o[0].shape[2], o[0].shape[3], self.cfg.head.location_offset)
                for k, o in outputs.items()}

    # --- training -------------------------------------------------------------

    def loss(self, images: Tensor, gt_boxes: Sequence[np.ndarray], gt_labels: Sequence[np.ndarray],
             gt_masks: Sequence[np.ndarray]) -> dict:
        """All loss terms plus ``total`` for one batch."""
        tcfg = self.cfg.train
        n, _, h, w = images.shape
        k = self.cfg.head.class_count
        for lab in gt_labels:
            if np.any(np.asarray(lab) < 0) or np.any(np.asarray(lab) >= k):
                raise ValueError(f"ground-truth labels must lie in [0, {k}); got {sorted(set(np.asarray(lab).tolist()))}")
        with _blame("features"):
            pyramid = self.pyramid(images)
            outputs = self.head_outputs(pyramid)
        grids = self.grids(outputs)
        targets = [fcos_assign_targets(gt_boxes[i], gt_labels[i], grids) for i in range(n)]
        labels, boxes, ctr = _batch_targets(targets, n)

        cls_rows = ops.concat_rows([ops.to_rows(outputs[k][0]) for k in LEVELS])
        ctr_rows = ops.concat_rows([ops.to_rows(outputs[k][1]) for k in LEVELS])
        box_rows = ops.concat_rows([ops.to_rows(outputs[k][2]) for k in LEVELS])
        pos = np.nonzero(labels >= 0)[0]
        with _blame("cls"):
            losses = {"cls": focal_loss(cls_rows, labels)}
        if pos.size:
            with _blame("center"):
                losses["center"] = bce_loss(ops.reshape(ops.take_rows(ctr_rows, pos), (pos.size,)), ctr[pos])
            with _blame("box"):
                losses["box"] = iou_loss(ops.take_rows(box_rows, pos), boxes[pos], ctr[pos])
        else:
            losses["center"] = zero_loss()
            losses["box"] = zero_loss()

        rois = self._training_rois(outputs, (h, w), gt_boxes, gt_labels) if (tcfg.gt_rois or tcfg.detection_rois) \
            else None
        losses["mask"], losses["maskiou"] = zero_loss(), zero_loss()
        if rois is not None and len(rois[0]):
            roi_boxes, roi_batch, roi_labels, roi_gt = rois
            with _blame("mask"):
                feats, logits, _ = self.mask_logits(pyramid, roi_boxes, roi_batch, h * w)
            with profile.stage("mask"), _blame("mask"):
                size = logits.shape[2]
                tgt = np.stack([mask_target(b, gt_masks[bi][g], size)
                                for b, bi, g in zip(roi_boxes, roi_batch, roi_gt)])[:, None]
                chosen = ops.select_channel(logits, roi_labels)
                losses["mask"] = bce_loss(chosen, tgt)
                if self.maskiou_head is not None:
                    # the scoring branch sees the mask as a constant; its target follows from it
                    prob = ops.sigmoid(chosen).detach()
                    measured = np.array([mask_iou(p[0] >= 0.5, t[0]) for p, t in zip(prob.data, tgt)])
                    with _blame("maskiou"):
                        raw = self.maskiou_head(feats, prob)
                        k = raw.shape[1]
                        pred = ops.reshape(ops.select_channel(ops.reshape(raw, (len(roi_labels), k, 1, 1)),
                                                              roi_labels), (len(roi_labels),))
                        losses["maskiou"] = maskiou_loss(pred, measured)
        parts = [losses["cls"], losses["center"], losses["box"]]
        if tcfg.mask_loss_in_total:
            parts.append(losses["mask"])
        if tcfg.maskiou_loss_in_total and self.maskiou_head is not None:
            parts.append(losses["maskiou"])
        losses["total"] = total_loss(parts)
        return losses

    def _training_rois(self, outputs: dict, image_hw: tuple, gt_boxes, gt_labels):
        """Boxes for the mask branch: ground truth plus detections matched at IoU >= 0.5."""
        tcfg = self.cfg.train
        n = len(gt_boxes)
        dets = None
        if tcfg.detection_rois:
            with no_record():
                dets = self.detect(outputs, image_hw, self.cfg.head.max_detections_train)
        out_boxes, out_batch, out_labels, out_gt = [], [], [], []
        for i in range(n):
            gb = np.asarray(gt_boxes[i], dtype=np.float64).reshape(-1, 4)
            gl = np.asarray(gt_labels[i], dtype=np.int64)
            cand_boxes, cand_gt = [], []
            if tcfg.gt_rois:
                cand_boxes.extend(gb)
                cand_gt.extend(range(len(gb)))
            if dets is not None and len(dets[i]) and len(gb):
                ious = box_iou(dets[i].boxes, gb)
                best = ious.argmax(axis=1)
                ok = ious[np.arange(len(best)), best] >= tcfg.roi_match_iou
                for j in np.nonzero(ok)[0]:
                    b = dets[i].boxes[j]
                    if b[2] - b[0] > 0 and b[3] - b[1] > 0:
                        cand_boxes.append(b)
                        cand_gt.append(int(best[j]))
            cap = tcfg.mask_rois_per_image
            for b, g in list(zip(cand_boxes, cand_gt))[:cap]:
                out_boxes.append(b)
                out_batch.append(i)
                out_labels.append(int(gl[g]))
                out_gt.append(g)
        return (np.array(out_boxes, dtype=np.float64).reshape(-1, 4), np.array(out_batch, dtype=np.int64),
                np.array(out_labels, dtype=np.int64), np.array(out_gt, dtype=np.int64))

    # --- inference ------------------------------------------------------------

    def predict(self, images: Tensor, budget: Optional[int] = None) -> list:
        """Instances for each image, best recalibrated score first."""
        budget = self.cfg.head.max_detections_infer if budget is None else budget
        n, _, h, w = images.shape
        with no_record():
            pyramid = self.pyramid(images)
            outputs = self.head_outputs(pyramid)
            dets = self.detect(outputs, (h, w), budget)
            boxes, batch, owners = [], [], []
            for i, d in enumerate(dets):
                for j in range(len(d)):
                    b = d.boxes[j]
                    if b[2] - b[0] > 0 and b[3] - b[1] > 0:
                        boxes.append(b)
                        batch.append(i)
                        owners.append((i, j))
            results: list = [[] for _ in range(n)]
            if not boxes:
                return results
            boxes = np.array(boxes)
            feats, logits, levels = self.mask_logits(pyramid, boxes, batch, h * w)
            with profile.stage("mask"):
                k = logits.shape[1]
                if self.maskiou_head is not None:
                    labels = np.array([dets[i].labels[j] for i, j in owners])
                    chosen = logits.data[np.arange(len(owners)), labels][:, None]
                    prob = Tensor(1.0 / (1.0 + np.exp(-chosen.astype(np.float64))))
                    ious = np.clip(self.maskiou_head(feats, prob).data.astype(np.float64), 0.0, 1.0)
                else:
                    ious = np.ones((len(owners), k))
                for r, (i, j) in enumerate(owners):
                    d = dets[i]
                    label = int(d.labels[j])
                    score = float(d.scores[j])
                    lg = logits.data[r].astype(np.float64)
                    results[i].append(InstanceResult(
                        box=d.boxes[j].copy(), label=label, score=score, level=int(levels[r]),
                        mask_logits=lg, mask_iou=ious[r], recalibrated_score=score * float(ious[r, label]),
                        mask=paste_mask(lg[label], d.boxes[j], (h, w), self.cfg.mask.paste_threshold)))
        for res in results:
            res.sort(key=lambda inst: -inst.recalibrated_score)
        return results


def _batch_targets(targets: Sequence[LocationTargets], n: int):
    """Reorder per-image targets into (level, image, location) row order."""
    labels, boxes, ctr = [], [], []
    for li in range(len(LEVELS)):
        for i in range(n):
            s = targets[i].level(li)
            labels.append(targets[i].labels[s])
            boxes.append(targets[i].boxes[s])
            ctr.append(targets[i].centerness[s])
    return np.concatenate(labels), np.concatenate(boxes), np.concatenate(ctr)
