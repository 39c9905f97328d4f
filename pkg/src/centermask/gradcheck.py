"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import NonFiniteError, Tape, Tensor, branch_log, frozen_constants, no_record, precision


@dataclass
class GradReport:
    """Maximum relative error per parameter tensor (keyed by name or position)."""

    errors: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    # perturbations whose forward pass took a different relu/max branch than the base point
    straddles: dict = field(default_factory=dict)

    @property
    def straddle_count(self) -> int:
        return sum(self.straddles.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol

    def lines(self) -> list[str]:
        return [f"{k}\t{v:.3e}\t({self.checked[k]} entries, {self.straddles.get(k, 0)} straddling a kink)"
                for k, v in self.errors.items()]


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: float) -> float:
    # entries far below the tensor's largest gradient are judged against 1% of it
    floor = 1e-2 * scale + 1e-10
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _branches(loss_fn) -> list:
    with branch_log() as log:
        loss_fn()
    return log


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def backward_and_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
                       max_entries: Optional[int] = None, seed: int = 0,
                       names: Optional[Sequence[str]] = None, hold_branches: bool = False) -> GradReport:
    """Fill ``grad`` on every parameter, then compare against central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values.
    The analytic pass runs at storage precision; the finite differences are
    re-evaluated with every parameter promoted to float64, and with every
    ``stop_gradient`` value held at what the unperturbed float64 pass produced.
    ``max_entries`` caps how many entries of each tensor are perturbed (chosen
    at random).

    A perturbation that changes a relu or max branch straddles a kink, where
    a central difference no longer measures the derivative; such events are
    counted per tensor. With ``hold_branches`` the perturbed passes reuse the
    base point's branches, so they evaluate the smooth piece active at the
    base point, which has the same derivative there.
    """
    for p in params:
        if not p.requires_grad:
            raise ValueError(f"parameter {p!r} is not tracked on the tape")
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss must be a scalar")
    tape.backward(loss)
    analytic = []
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if p.grad is None:
            p.grad = g
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p!r}")
        analytic.append(g.astype(np.float64))

    rng = np.random.default_rng(seed)
    report = GradReport()
    saved = [p.data for p in params]
    try:
        with precision(np.float64), no_record():
            for p in params:
                p.data = p.data.astype(np.float64)
            with frozen_constants() as stopped:
                base = _branches(loss_fn)
            for k, p in enumerate(params):
                key = names[k] if names is not None else (p.name or str(k))
                flat = p.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
                held = base if hold_branches else None
                numeric = np.empty(idx.size)
                straddles = 0
                for j, i in enumerate(idx):
                    orig = flat[i]
                    flat[i] = orig + eps
                    with branch_log(held) as bp, frozen_constants(stopped):
                        f_plus = loss_fn().item()
                    flat[i] = orig - eps
                    with branch_log(held) as bm, frozen_constants(stopped):
                        f_minus = loss_fn().item()
                    flat[i] = orig
                    numeric[j] = (f_plus - f_minus) / (2 * eps)
                    straddles += not (_same(bp, base) and _same(bm, base))
                report.straddles[key] = straddles
                a = analytic[k].reshape(-1)
                report.errors[key] = _relative_error(a[idx], numeric, float(np.max(np.abs(a), initial=0.0)))
                report.checked[key] = int(idx.size)
    finally:
        for p, d in zip(params, saved):
            p.data = d
    return report
