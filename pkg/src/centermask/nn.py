"""Parameter containers and the few layer types shared by every block."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor, parameter


def he_normal(rng: np.random.Generator, shape, gain: float = np.sqrt(2.0)) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)


class Module:
    """Named-parameter tree. Attribute order fixes the parameter order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unknown = sorted(set(state) - set(params))
        if missing:
            raise KeyError(f"missing parameters: {', '.join(missing)}")
        if unknown:
            raise KeyError(f"unknown parameters: {', '.join(unknown)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: file {value.shape}, model {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, kernel: int = 3, stride: int = 1,
                 pad: Optional[int] = None, gain: float = np.sqrt(2.0), std: Optional[float] = None,
                 bias_init: float = 0.0):
        shape = (cout, cin, kernel, kernel)
        w = rng.normal(0.0, std, size=shape) if std is not None else he_normal(rng, shape, gain)
        self.weight = parameter(w)
        self.bias = parameter(np.full(cout, bias_init))
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, gain: float = np.sqrt(2.0),
                 std: Optional[float] = None):
        w = rng.normal(0.0, std, size=(cout, cin)) if std is not None else he_normal(rng, (cout, cin), gain)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.fully_connected(x, self.weight, self.bias)
