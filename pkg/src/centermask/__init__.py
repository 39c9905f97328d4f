"""Desk-scale CenterMask instance segmentation on a small numpy autodiff core."""

from .config import CenterMaskConfig, base_config, lite_config, tiny_config
from .model import CenterMask, InstanceResult
from .tensor import Tape, Tensor, parameter, precision

__all__ = [
    "CenterMask",
    "CenterMaskConfig",
    "InstanceResult",
    "Tape",
    "Tensor",
    "base_config",
    "lite_config",
    "parameter",
    "precision",
    "tiny_config",
]

__version__ = "0.1.0"
