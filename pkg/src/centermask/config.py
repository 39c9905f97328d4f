"""Model/training configuration and its flat ``section.key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Any

from .backbone import BackboneConfig, OsaConfig
from .head import HeadConfig
from .mask import MaskConfig


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iterations: int = 2000
    milestones: tuple = (1333, 1777)
    warmup_iters: int = 100
    warmup_factor: float = 1.0 / 3
    batch_size: int = 4
    seed: int = 0
    image_size: int = 64
    max_instances: int = 5
    train_images: int = 0  # 0 draws a fresh scene per sample
    mask_rois_per_image: int = 8
    gt_rois: bool = True
    detection_rois: bool = True
    roi_match_iou: float = 0.5
    mask_loss_in_total: bool = True
    maskiou_loss_in_total: bool = True
    grad_clip: float = 10.0  # global gradient-norm cap; 0 disables
    checkpoint_every: int = 0

    def __post_init__(self):
        for m in self.milestones:
            if not 0 < m < self.iterations:
                raise ValueError(f"milestone {m} is not inside the {self.iterations}-iteration budget")

    @classmethod
    def scaled(cls, iterations: int, **kw) -> "TrainConfig":
        """Milestones at 2/3 and 8/9 of the budget."""
        return cls(iterations=iterations, milestones=(iterations * 2 // 3, iterations * 8 // 9), **kw)


@dataclass(frozen=True)
class CenterMaskConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def class_count(self) -> int:
        return self.head.class_count


def base_config(class_count: int = 3) -> CenterMaskConfig:
    return CenterMaskConfig(
        backbone=BackboneConfig.preset("V2-39", fpn_channels=256),
        head=HeadConfig(tower_depth=4, tower_channels=256, class_count=class_count),
        mask=MaskConfig(conv_depth=4, conv_channels=256, maskiou_convs=4, maskiou_fc=1024),
    )


def lite_config(class_count: int = 3) -> CenterMaskConfig:
    return CenterMaskConfig(
        backbone=BackboneConfig.preset("V2-19-slim", fpn_channels=128),
        head=HeadConfig(tower_depth=2, tower_channels=128, class_count=class_count),
        mask=MaskConfig(conv_depth=2, conv_channels=128, maskiou_convs=2, maskiou_fc=256),
    )


def tiny_config(class_count: int = 2) -> CenterMaskConfig:
    """Minimal widths for whole-model gradient checks."""
    stages = tuple(OsaConfig(conv_count=1, conv_channels=4, out_channels=c, module_count=1) for c in (6, 6, 8, 8))
    return CenterMaskConfig(
        backbone=BackboneConfig("tiny", (4, 4, 6), stages, fpn_channels=6),
        head=HeadConfig(tower_depth=1, tower_channels=6, class_count=class_count),
        mask=MaskConfig(conv_depth=1, conv_channels=4, maskiou_convs=1, maskiou_fc=8),
        train=TrainConfig.scaled(30, image_size=32, batch_size=1, max_instances=2),
    )


PRESETS = {"base": base_config, "lite": lite_config, "tiny": tiny_config}


# --- text form ---------------------------------------------------------------

def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _flatten(obj: Any, prefix: str, out: list) -> None:
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            _flatten(value, key + ".", out)
        elif isinstance(value, tuple) and value and dataclasses.is_dataclass(value[0]):
            for i, item in enumerate(value):
                _flatten(item, f"{key}.{i}.", out)
        else:
            out.append((key, value))


def to_text(cfg: CenterMaskConfig) -> str:
    items: list = []
    _flatten(cfg, "", items)
    return "".join(f"{k} = {_format(v)}\n" for k, v in items)


def reference_text() -> str:
    """Every key with its default (lite preset), one per line."""
    header = "# CenterMask configuration; `section.key = value`, `#` starts a comment.\n"
    return header + to_text(lite_config())


def _parse_like(raw: str, like: Any) -> Any:
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        parts = [p for p in (s.strip() for s in raw.split(",")) if p]
        elem = like[0] if like else 0.0
        return tuple(_parse_like(p, elem) for p in parts)
    return raw


def _lookup(obj: Any, path: list) -> Any:
    """The current value a dotted key names; raises KeyError for sections and unknown names."""
    for i, name in enumerate(path):
        if isinstance(obj, tuple):
            obj = obj[int(name)]
        elif dataclasses.is_dataclass(obj):
            if name not in {f.name for f in dataclasses.fields(obj)}:
                raise KeyError(f"unknown config key component {name!r}")
            obj = getattr(obj, name)
        else:
            raise KeyError(f"{'.'.join(path[:i])} is a value, not a section")
    if dataclasses.is_dataclass(obj) or (isinstance(obj, tuple) and obj and dataclasses.is_dataclass(obj[0])):
        raise KeyError(f"{'.'.join(path)} is a section, not a key")
    return obj


def _apply(obj: Any, edits: dict) -> Any:
    """Apply a nested {name: raw | sub-edits} tree with one ``replace`` per dataclass.

    Validation in ``__post_init__`` therefore sees the final values together.
    """
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for name, edit in edits.items():
        if name not in names:
            raise KeyError(f"unknown config key component {name!r}")
        value = getattr(obj, name)
        if isinstance(edit, str):
            if dataclasses.is_dataclass(value):
                raise KeyError(f"{name!r} is a section, not a key")
            changes[name] = _parse_like(edit, value)
        elif dataclasses.is_dataclass(value):
            changes[name] = _apply(value, edit)
        elif isinstance(value, tuple) and value and dataclasses.is_dataclass(value[0]):
            items = list(value)
            for i, sub in edit.items():
                items[int(i)] = _apply(items[int(i)], sub)
            changes[name] = tuple(items)
        else:
            raise KeyError(f"{name!r} does not name a section")
    return replace(obj, **changes)


def from_text(text: str, base: CenterMaskConfig | None = None) -> CenterMaskConfig:
    """Parse ``section.key = value`` lines over ``base`` (the lite preset by default).

    A ``preset = name`` line swaps the base for that preset.
    """
    cfg = lite_config() if base is None else base
    edits: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `key = value`")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if raw not in PRESETS:
                raise ValueError(f"line {lineno}: unknown preset {raw!r}")
            cfg = PRESETS[raw]()
            continue
        try:
            _parse_like(raw, _lookup(cfg, key.split(".")))
        except (KeyError, ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        *path, last = key.split(".")
        node = edits
        for part in path:
            node = node.setdefault(part, {})
            if isinstance(node, str):
                raise ValueError(f"line {lineno}: {key} conflicts with an earlier key")
        node[last] = raw
    return _apply(cfg, edits)


def load_config(path: str) -> CenterMaskConfig:
    with open(path, encoding="utf-8") as fh:
        return from_text(fh.read())


def save_config(cfg: CenterMaskConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(cfg))
