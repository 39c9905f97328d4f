"""Seeded synthetic scenes: circles, rectangles and triangles on textured backgrounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("circle", "rectangle", "triangle")
MIN_VISIBLE = 16
MAX_ATTEMPTS = 100
# a shape's colour differs from the background under it and from any shape it
# touches by at least this much in some channel
MIN_CONTRAST = 0.2


@dataclass
class Instance:
    label: int
    box: np.ndarray  # x1, y1, x2, y2 in pixels, exclusive right/bottom edges
    mask: np.ndarray  # H x W uint8


@dataclass
class SceneSample:
    image: np.ndarray  # 3 x H x W float32, standardized
    pixels: np.ndarray  # H x W x 3 uint8, the unstandardized rendering
    instances: list
    seed: int

    @property
    def boxes(self) -> np.ndarray:
        return np.array([i.box for i in self.instances], dtype=np.float64).reshape(-1, 4)

    @property
    def labels(self) -> np.ndarray:
        return np.array([i.label for i in self.instances], dtype=np.int64)

    @property
    def masks(self) -> np.ndarray:
        h, w = self.pixels.shape[:2]
        return np.array([i.mask for i in self.instances], dtype=np.uint8).reshape(-1, h, w)


def standardize(pixels: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 -> 3 x H x W float32 with per-channel zero mean, unit variance."""
    x = pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
    mu = x.mean(axis=(1, 2), keepdims=True)
    sd = x.std(axis=(1, 2), keepdims=True)
    return ((x - mu) / np.maximum(sd, 1e-3)).astype(np.float32)


def tight_box(mask: np.ndarray) -> np.ndarray:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return np.array([cols[0], rows[0], cols[-1] + 1, rows[-1] + 1], dtype=np.float64)


def draw_circle(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    return ((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r).astype(np.uint8)


def draw_rectangle(h: int, w: int, x1: float, y1: float, x2: float, y2: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    return ((xx >= x1) & (xx <= x2) & (yy >= y1) & (yy <= y2)).astype(np.uint8)


def draw_triangle(h: int, w: int, pts) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    (ax, ay), (bx, by), (cx, cy) = pts

    def side(px, py, qx, qy):
        return (qx - px) * (yy - py) - (qy - py) * (xx - px)

    d1, d2, d3 = side(ax, ay, bx, by), side(bx, by, cx, cy), side(cx, cy, ax, ay)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return (~(neg & pos)).astype(np.uint8)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.empty((h, w, 3))
    for c in range(3):
        field = np.full((h, w), rng.uniform(0.25, 0.75))
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            field += rng.uniform(0.03, 0.12) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img[..., c] = field
    img += rng.normal(0.0, 0.04, size=img.shape)
    return img


def _contrasting_color(rng: np.random.Generator, background: np.ndarray, mask: np.ndarray,
                       others: list, other_colors: list) -> np.ndarray:
    grown = _dilate(mask)
    refs = [background[mask > 0].mean(axis=0)]
    refs += [c for o, c in zip(others, other_colors) if np.any(o & grown)]
    for _ in range(MAX_ATTEMPTS):
        col = rng.uniform(0.0, 1.0, size=3)
        if all(np.max(np.abs(col - r)) >= MIN_CONTRAST for r in refs):
            return col
    raise RuntimeError("could not find a contrasting colour")


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _shape(rng: np.random.Generator, label: int, h: int, w: int, min_size: int, max_size: int) -> np.ndarray:
    size = rng.uniform(min_size, max_size)
    cx = rng.uniform(size / 2, w - size / 2)
    cy = rng.uniform(size / 2, h - size / 2)
    if label == 0:
        return draw_circle(h, w, cx, cy, size / 2)
    if label == 1:
        aspect = rng.uniform(0.6, 1.0)
        bw, bh = (size, size * aspect) if rng.random() < 0.5 else (size * aspect, size)
        return draw_rectangle(h, w, cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2)
    half = size / 2
    apex = cx + rng.uniform(-0.5, 0.5) * half
    pts = [(cx - half, cy + half), (cx + half, cy + half), (apex, cy - half)]
    if rng.random() < 0.5:  # flip vertically
        pts = [(x, 2 * cy - y) for x, y in pts]
    return draw_triangle(h, w, pts)


def generate_sample(seed: int, h: int = 64, w: int = 64, max_instances: int = 5,
                    min_size: float = 12.0, max_size: float = 30.0) -> SceneSample:
    """Render one deterministic scene for ``seed``.

    Later shapes occlude earlier ones; an instance whose visible area drops
    below 16 pixels is redrawn.
    """
    if h % 32 or w % 32:
        raise ValueError("image extents must be multiples of 32")
    if max_instances < 1:
        raise ValueError("max_instances must be >= 1")
    rng = np.random.default_rng(seed)
    img = _background(rng, h, w)
    count = int(rng.integers(1, max_instances + 1))
    masks: list[np.ndarray] = []
    labels: list[int] = []
    colors: list[np.ndarray] = []
    for _ in range(count):
        label = int(rng.integers(0, len(CLASS_NAMES)))
        for attempt in range(MAX_ATTEMPTS):
            m = _shape(rng, label, h, w, min_size, max_size)
            visible = [prev & (1 - m) for prev in masks]
            if m.sum() >= MIN_VISIBLE and all(v.sum() >= MIN_VISIBLE for v in visible):
                break
        else:
            raise RuntimeError(f"seed {seed}: could not place a visible instance in {MAX_ATTEMPTS} attempts")
        masks = visible + [m]
        labels.append(label)
        colors.append(_contrasting_color(rng, img, m, masks[:-1], colors))
    # paint in order so later shapes cover earlier ones
    for m, col in zip(masks, colors):
        shade = col + rng.normal(0.0, 0.03, size=(h, w, 3))
        img = np.where(m[..., None] > 0, shade, img)
    pixels = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    instances = [Instance(lab, tight_box(m), m.astype(np.uint8)) for lab, m in zip(labels, masks)]
    return SceneSample(standardize(pixels), pixels, instances, seed)
