"""VoVNetV2 backbone (OSA modules with residual path and eSE) and the P3-P7 pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .nn import Conv, Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class OsaConfig:
    conv_count: int = 3
    conv_channels: int = 128
    out_channels: int = 256
    module_count: int = 1
    residual: bool = True
    attention: str = "ese"  # none | se | ese
    se_reduction: int = 16
    kernel: int = 3

    def __post_init__(self):
        if self.conv_count < 1 or self.module_count < 1:
            raise ValueError("conv_count and module_count must be >= 1")
        if self.attention not in ("none", "se", "ese"):
            raise ValueError(f"unknown attention {self.attention!r}")


def _stages(conv_count, conv_channels, out_channels, module_counts, **kw) -> tuple:
    return tuple(OsaConfig(conv_count, c, o, m, **kw)
                 for c, o, m in zip(conv_channels, out_channels, module_counts))


_WIDE = dict(conv_channels=(128, 160, 192, 224), out_channels=(256, 512, 768, 1024))
_SLIM = dict(conv_channels=(64, 80, 96, 112), out_channels=(112, 256, 384, 512))

VARIANTS = {
    "V2-19": dict(conv_count=3, module_counts=(1, 1, 1, 1), **_WIDE),
    "V2-19-slim": dict(conv_count=3, module_counts=(1, 1, 1, 1), **_SLIM),
    "V2-39": dict(conv_count=5, module_counts=(1, 1, 2, 2), **_WIDE),
    "V2-57": dict(conv_count=5, module_counts=(1, 1, 4, 3), **_WIDE),
    "V2-99": dict(conv_count=5, module_counts=(1, 3, 9, 3), **_WIDE),
}


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "V2-39"
    stem: tuple = (64, 64, 128)
    stages: tuple = field(default_factory=lambda: _stages(**VARIANTS["V2-39"]))
    fpn_channels: int = 256

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ValueError("a backbone has exactly 4 stages")
        if len(self.stem) != 3:
            raise ValueError("the stem has exactly 3 convolutions")

    @classmethod
    def preset(cls, variant: str, fpn_channels: int = 256, attention: str = "ese",
               residual: bool = True, stem: tuple = (64, 64, 128)) -> "BackboneConfig":
        spec = VARIANTS[variant]
        return cls(variant, tuple(stem), _stages(attention=attention, residual=residual, **spec), fpn_channels)

    def stage_strides(self) -> tuple:
        return tuple(2 ** (k + 1) for k in range(1, 5))


class ESE(Module):
    """Channel gate from one full-width affine layer: x * sigmoid(W gap(x) + b)."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.fc = Linear(rng, channels, channels, gain=1.0)

    def gate(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        pooled = ops.reshape(ops.global_avg_pool(x), (n, c))
        return ops.reshape(ops.sigmoid(self.fc(pooled)), (n, c, 1, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.scale_channels(x, self.gate(x))


class SE(Module):
    """Reduce-then-expand channel gate; hidden width is max(1, C // r)."""

    def __init__(self, rng: np.random.Generator, channels: int, reduction: int = 16):
        if channels < 1:
            raise ValueError("SE needs at least one channel")
        hidden = max(1, channels // reduction)
        self.reduce = Linear(rng, channels, hidden)
        self.expand = Linear(rng, hidden, channels, gain=1.0)

    def gate(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        pooled = ops.reshape(ops.global_avg_pool(x), (n, c))
        a = ops.sigmoid(self.expand(ops.relu(self.reduce(pooled))))
        return ops.reshape(a, (n, c, 1, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.scale_channels(x, self.gate(x))


def ese_forward(x_div: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Functional eSE with an explicit C x C weight."""
    c = x_div.shape[1]
    if w.shape != (c, c):
        raise ValueError(f"eSE weight must be square {c} x {c}, got {w.shape}")
    n = x_div.shape[0]
    pooled = ops.reshape(ops.global_avg_pool(x_div), (n, c))
    gate = ops.reshape(ops.sigmoid(ops.fully_connected(pooled, w, b)), (n, c, 1, 1))
    return ops.scale_channels(x_div, gate)


def se_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Functional SE with explicit reduce (C/r x C) and expand (C x C/r) weights."""
    n, c = x.shape[:2]
    if c < 1:
        raise ValueError("SE needs at least one channel")
    pooled = ops.reshape(ops.global_avg_pool(x), (n, c))
    hidden = ops.relu(ops.fully_connected(pooled, w1, b1))
    gate = ops.reshape(ops.sigmoid(ops.fully_connected(hidden, w2, b2)), (n, c, 1, 1))
    return ops.scale_channels(x, gate)


class OSA(Module):
    """One-shot aggregation: sequential convs, one concat (input included), 1x1 merge."""

    def __init__(self, rng: np.random.Generator, in_channels: int, cfg: OsaConfig):
        self.in_channels = in_channels
        self.cfg = cfg
        chans = [in_channels] + [cfg.conv_channels] * cfg.conv_count
        self.convs = [Conv(rng, chans[i], cfg.conv_channels, cfg.kernel) for i in range(cfg.conv_count)]
        self.concat_channels = in_channels + cfg.conv_count * cfg.conv_channels
        self.aggregate = Conv(rng, self.concat_channels, cfg.out_channels, 1)
        if cfg.attention == "ese":
            self.attention = ESE(rng, cfg.out_channels)
        elif cfg.attention == "se":
            self.attention = SE(rng, cfg.out_channels, cfg.se_reduction)
        else:
            self.attention = None
        # the identity path needs matching widths
        self.residual = cfg.residual and in_channels == cfg.out_channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"OSA expects {self.in_channels} input channels, got {x.shape[1]}")
        feats = [x]
        h = x
        for conv in self.convs:
            h = ops.relu(conv(h))
            feats.append(h)
        y = ops.relu(self.aggregate(ops.concat_channels(feats)))
        if self.attention is not None:
            y = self.attention(y)
        if self.residual:
            y = ops.add(y, x)
        return y


def osa_forward(x: Tensor, module: OSA) -> Tensor:
    return module(x)


class VoVNet(Module):
    """Stem plus four OSA stages; returns {2: C2, 3: C3, 4: C4, 5: C5}."""

    def __init__(self, rng: np.random.Generator, cfg: BackboneConfig, in_channels: int = 3):
        self.cfg = cfg
        s1, s2, s3 = cfg.stem
        self.stem = [Conv(rng, in_channels, s1, 3, stride=2), Conv(rng, s1, s2, 3, stride=1),
                     Conv(rng, s2, s3, 3, stride=2)]
        self.stages = []
        cin = s3
        for scfg in cfg.stages:
            blocks = []
            for _ in range(scfg.module_count):
                blocks.append(OSA(rng, cin, scfg))
                cin = scfg.out_channels
            self.stages.append(Stage(blocks))
        self.out_channels = tuple(s.out_channels for s in cfg.stages)

    def __call__(self, image: Tensor) -> dict:
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ValueError(f"input extents must be multiples of 32, got {h}x{w}")
        x = image
        for conv in self.stem:
            x = ops.relu(conv(x))
        feats = {}
        for level, stage in zip(range(2, 6), self.stages):
            if level > 2:
                x = ops.max_pool2d(x, 3, 2, pad=1)
            x = stage(x)
            feats[level] = x
        return feats


class Stage(Module):
    def __init__(self, blocks: list):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def backbone_forward(image: Tensor, net: VoVNet) -> dict:
    return net(image)


class FPN(Module):
    """Top-down pyramid over C3-C5 with extra stride-2 levels P6 and P7."""

    def __init__(self, rng: np.random.Generator, in_channels: tuple, channels: int):
        c3, c4, c5 = in_channels
        self.channels = channels
        self.lateral = [Conv(rng, c, channels, 1, gain=1.0) for c in (c3, c4, c5)]
        self.output = [Conv(rng, channels, channels, 3, gain=1.0) for _ in range(3)]
        self.p6 = Conv(rng, channels, channels, 3, stride=2, gain=1.0)
        self.p7 = Conv(rng, channels, channels, 3, stride=2, gain=1.0)

    def __call__(self, cs: dict) -> dict:
        for k in (3, 4, 5):
            if k not in cs:
                raise KeyError(f"FPN input C{k} missing")
        inner = self.lateral[2](cs[5])
        outs = {5: self.output[2](inner)}
        for k, lat, out in ((4, self.lateral[1], self.output[1]), (3, self.lateral[0], self.output[0])):
            top = ops.upsample_nearest2x(inner)
            lateral = lat(cs[k])
            if top.shape != lateral.shape:
                top = ops.crop(top, lateral.shape[2], lateral.shape[3])
            inner = ops.add(lateral, top)
            outs[k] = out(inner)
        outs[6] = self.p6(outs[5])
        outs[7] = self.p7(ops.relu(outs[6]))
        return {k: outs[k] for k in range(3, 8)}


def fpn_forward(cs: dict, fpn: FPN) -> dict:
    return fpn(cs)


def ese_parameter_count(channels: int) -> int:
    return channels * channels + channels


def se_parameter_count(channels: int, reduction: int = 16) -> int:
    hidden = max(1, channels // reduction)
    return 2 * channels * hidden + hidden + channels
