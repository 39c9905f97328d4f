"""SGD with momentum, the step schedule and the training loop."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import weights
from .config import TrainConfig
from .model import LOSS_TERMS, CenterMask
from .results import evaluate_on_seeds
from .synth import generate_sample
from .tensor import NonFiniteError, Tape, Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "lr") + LOSS_TERMS + ("total",)
TRAIN_SEED_BASE = 1_000_000


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Base rate with linear warmup and a factor-10 drop at each milestone reached."""
    lr = cfg.lr * 0.1 ** sum(iteration >= m for m in cfg.milestones)
    if iteration < cfg.warmup_iters:
        alpha = iteration / cfg.warmup_iters
        lr *= cfg.warmup_factor * (1 - alpha) + alpha
    return lr


def sgd_step(params: dict, state: dict, cfg: TrainConfig, iteration: int, lr: Optional[float] = None) -> float:
    """v <- momentum v + g + wd w;  w <- w - lr v.  Returns the rate used."""
    lr = lr_at(iteration, cfg) if lr is None else lr
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
    for name, p in params.items():
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = cfg.momentum * v + p.grad + cfg.weight_decay * p.data
        state[name] = v.astype(p.data.dtype)
        p.data = (p.data - lr * state[name]).astype(p.data.dtype)
    return lr


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``; returns the norm before."""
    norm = float(np.sqrt(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in params.values())))
    if norm > max_norm:
        for p in params.values():
            p.grad *= max_norm / norm
    return norm


def batch_seeds(iteration: int, cfg: TrainConfig) -> list:
    base = TRAIN_SEED_BASE * (cfg.seed + 1)
    idx = [iteration * cfg.batch_size + b for b in range(cfg.batch_size)]
    if cfg.train_images > 0:
        idx = [i % cfg.train_images for i in idx]
    return [base + i for i in idx]


def make_batch(seeds, cfg: TrainConfig):
    samples = [generate_sample(s, cfg.image_size, cfg.image_size, cfg.max_instances) for s in seeds]
    images = Tensor(np.stack([s.image for s in samples]))
    return images, [s.boxes for s in samples], [s.labels for s in samples], [s.masks for s in samples]


def format_log_line(iteration: int, lr: float, terms: dict) -> str:
    vals = [repr(float(np.float32(terms[k]))) for k in LOSS_TERMS + ("total",)]
    return "\t".join([str(iteration), repr(float(lr))] + vals)


def parse_log(text: str) -> list:
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        rows.append({"iter": int(parts[0]), **{k: float(v) for k, v in zip(LOG_COLUMNS[1:], parts[1:])}})
    return rows


@dataclass
class TrainState:
    iteration: int = 0
    momentum: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def save_checkpoint(path: str, model: CenterMask, state: TrainState) -> None:
    entries = [(f"param/{n}", p.data) for n, p in model.named_parameters()]
    entries += [(f"momentum/{n}", v) for n, v in state.momentum.items()]
    entries.append(("state/iteration", np.array([state.iteration], dtype=np.float32)))
    weights.save(path, entries)


def load_checkpoint(path: str, model: CenterMask) -> TrainState:
    entries = weights.load(path)
    params = {k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")}
    model.load_state_dict(params)
    momentum = {k[len("momentum/"):]: v.copy() for k, v in entries.items() if k.startswith("momentum/")}
    return TrainState(int(entries["state/iteration"][0]), momentum)


def train_step(model: CenterMask, state: TrainState, cfg: TrainConfig) -> dict:
    i = state.iteration
    images, boxes, labels, masks = make_batch(batch_seeds(i, cfg), cfg)
    params = dict(model.named_parameters())
    for p in params.values():
        p.grad = None
    try:
        with Tape() as tape:
            losses = model.loss(images, boxes, labels, masks)
        terms = {k: losses[k].item() for k in LOSS_TERMS + ("total",)}
        for k, v in terms.items():
            if not np.isfinite(v):
                raise NonFiniteError(f"{k} loss is not finite")
        tape.backward(losses["total"])
    except NonFiniteError as exc:
        raise FloatingPointError(f"iteration {i}: {exc}") from exc
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    if cfg.grad_clip > 0:
        clip_grad_norm(params, cfg.grad_clip)
    lr = sgd_step(params, state.momentum, cfg, i)
    state.iteration += 1
    return {"lr": lr, **terms}


def train_loop(model: CenterMask, cfg: Optional[TrainConfig] = None, state: Optional[TrainState] = None,
               log_path: Optional[str] = None, checkpoint_path: Optional[str] = None,
               until: Optional[int] = None, callback: Optional[Callable] = None) -> TrainState:
    """Train from ``state`` (fresh by default) to ``until`` (the full budget by default).

    Appends one tab-separated line per iteration to ``log_path``; writes a
    checkpoint every ``cfg.checkpoint_every`` iterations and at the end.
    """
    cfg = model.cfg.train if cfg is None else cfg
    state = TrainState() if state is None else state
    until = cfg.iterations if until is None else until
    fh = None
    if log_path is not None:
        fresh = state.iteration == 0 or not os.path.exists(log_path)
        fh = open(log_path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            fh.write("# " + "\t".join(LOG_COLUMNS) + "\n")
    try:
        while state.iteration < until:
            i = state.iteration
            row = train_step(model, state, cfg)
            state.history.append({"iter": i, **row})
            if fh is not None:
                fh.write(format_log_line(i, row["lr"], row) + "\n")
                fh.flush()
            if i % 50 == 0:
                log.info("iter %d lr %.5f total %.4f", i, row["lr"], row["total"])
            if callback is not None:
                callback(i, row)
            if checkpoint_path and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model, state)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, state)
    return state


@dataclass
class ToyResult:
    history: list
    seconds: float
    table: dict  # AP@0.5 table from evaluate_ap

    @property
    def initial_loss(self) -> float:
        return self.history[0]["total"]

    def final_loss(self, window: int = 20) -> float:
        """Mean total loss over the last ``window`` iterations; single batches are noisy."""
        return float(np.mean([r["total"] for r in self.history[-window:]]))


def toy_experiment(model: CenterMask, eval_seeds=range(100), log_path: Optional[str] = None,
                   checkpoint_path: Optional[str] = None, callback: Optional[Callable] = None) -> ToyResult:
    """Train ``model`` for its full budget, then score AP@0.5 on held-out scenes."""
    cfg = model.cfg.train
    t0 = time.perf_counter()
    state = train_loop(model, cfg, log_path=log_path, checkpoint_path=checkpoint_path, callback=callback)
    seconds = time.perf_counter() - t0
    table = evaluate_on_seeds(model, eval_seeds, cfg.image_size, cfg.max_instances, iou_thresholds=(0.5,))
    return ToyResult(state.history, seconds, table)
