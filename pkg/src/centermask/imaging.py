"""PNG input with stride padding, and result overlays."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .synth import CLASS_NAMES, standardize

PALETTE = ((230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240))


def pad_to_stride(pixels: np.ndarray, stride: int = 32) -> np.ndarray:
    """Zero-pad an H x W x 3 array on the bottom and right up to multiples of ``stride``."""
    h, w = pixels.shape[:2]
    ph, pw = -h % stride, -w % stride
    return np.pad(pixels, ((0, ph), (0, pw), (0, 0)))


def read_image(path: str, stride: int = 32) -> tuple:
    """(standardized 3 x H' x W' image, padded H' x W' x 3 uint8 pixels, original (H, W))."""
    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    padded = pad_to_stride(pixels, stride)
    return standardize(padded), padded, pixels.shape[:2]


def write_png(path: str, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)


def overlay(pixels: np.ndarray, instances, alpha: float = 0.45) -> np.ndarray:
    """Boxes, class names, recalibrated scores and translucent masks over ``pixels``."""
    out = pixels.astype(np.float64).copy()
    for k, inst in enumerate(instances):
        col = np.array(PALETTE[inst.label % len(PALETTE)], dtype=np.float64)
        m = inst.mask[: out.shape[0], : out.shape[1]] > 0
        out[m] = (1 - alpha) * out[m] + alpha * col
    im = Image.fromarray(out.round().astype(np.uint8))
    draw = ImageDraw.Draw(im)
    for inst in instances:
        col = PALETTE[inst.label % len(PALETTE)]
        x1, y1, x2, y2 = (float(v) for v in inst.box)
        draw.rectangle([x1, y1, max(x1, x2 - 1), max(y1, y2 - 1)], outline=col)
        name = CLASS_NAMES[inst.label] if inst.label < len(CLASS_NAMES) else str(inst.label)
        draw.text((x1 + 1, max(0.0, y1 - 10)), f"{name} {inst.recalibrated_score:.2f}", fill=col)
    return np.asarray(im)
