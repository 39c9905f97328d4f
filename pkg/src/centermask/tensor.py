"""Dense tensors and the recording tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_state = threading.local()

# Set to False to skip the finite-value scan after every operator.
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """Raised when an operator produces NaN or Inf."""


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def branch_log(replay: Optional[list] = None) -> Iterator[list]:
    """Collect the discrete choices (relu signs, argmax picks) made by operators.

    Two forward passes that log equal choices evaluate the same smooth piece
    of the function. With ``replay`` the operators use the given choices in
    order instead of their own, which evaluates that piece even where the
    natural choices would differ; the natural choices are still logged.
    """
    prev = getattr(_state, "branches", None)
    log: list = []
    _state.branches = (log, replay, [0])
    try:
        yield log
    finally:
        _state.branches = prev


def branch(choice: np.ndarray) -> np.ndarray:
    """Log an operator's discrete choice and return the one it should use."""
    active = getattr(_state, "branches", None)
    if active is None:
        return choice
    log, replay, pos = active
    log.append(np.array(choice, copy=True))
    if replay is None:
        return choice
    held = replay[pos[0]]
    pos[0] += 1
    if held.shape != np.shape(choice):
        raise ValueError("replayed branch does not match the operator's shape")
    return held


@contextlib.contextmanager
def frozen_constants(values: Optional[list] = None) -> Iterator[list]:
    """Record (``values`` None) or replay the outputs of ``stop_gradient``.

    Replaying lets a finite-difference pass evaluate the same function the
    tape differentiates, with stopped values held at the base point.
    """
    prev = getattr(_state, "frozen", None)
    record = values is None
    values = [] if record else list(values)
    _state.frozen = (record, values, [0])
    try:
        yield values
    finally:
        _state.frozen = prev


def stop_gradient(x: "Tensor") -> "Tensor":
    """The value of ``x`` as a constant: no gradient flows back through it."""
    frozen = getattr(_state, "frozen", None)
    if frozen is None:
        return Tensor(x.data)
    record, values, pos = frozen
    if record:
        values.append(np.array(x.data, copy=True))
        return Tensor(x.data)
    value = values[pos[0]]
    pos[0] += 1
    return Tensor(value)


class Tensor:
    """A dense array with an optional gradient buffer.

    Feature maps use the N x C x H x W layout; weights are stored in whatever
    shape their operator expects.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of operations for one forward/backward step.

    Used as a context manager: operators executed inside the ``with`` block
    record themselves when at least one input requires a gradient.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._prev = current_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        self.nodes.append(_Node(output, tuple(inputs), backward))

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Propagate d(loss) through the recorded nodes in reverse order.

        Gradients of leaf tensors (those not produced on this tape) are added
        into their ``grad`` buffers, so repeated calls accumulate.
        """
        if seed is None:
            if loss.size != 1:
                raise ValueError("backward() without a seed needs a scalar loss")
            seed = np.ones_like(loss.data)
        produced = {id(n.output) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=loss.data.dtype)}
        if id(loss) not in produced and loss.requires_grad:
            _accumulate_leaf(loss, grads[id(loss)])
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ValueError(f"backward produced shape {gi.shape} for input {t.shape}")
                if CHECK_FINITE and not np.all(np.isfinite(gi)):
                    raise NonFiniteError(f"non-finite gradient flowing into {t!r}")
                if id(t) in produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    _accumulate_leaf(t, gi)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def current_tape() -> Optional[Tape]:
    return getattr(_state, "tape", None)


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Run operators without recording, even inside an active tape."""
    prev = current_tape()
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = prev


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an operator result and register its backward rule if needed."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        op = backward.__qualname__.split(".<locals>")[0]
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out
