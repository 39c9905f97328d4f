"""Multiply-accumulate counting and per-stage wall-clock timing."""

from __future__ import annotations

import contextlib
import threading
import time
from collections import defaultdict
from typing import Iterator, Optional

_local = threading.local()


class Counter:
    def __init__(self):
        self.macs: dict[str, int] = defaultdict(int)
        self.seconds: dict[str, float] = defaultdict(float)
        self.stage = "other"


def _active() -> Optional[Counter]:
    return getattr(_local, "counter", None)


def add_macs(n: int) -> None:
    c = _active()
    if c is not None:
        c.macs[c.stage] += int(n)


@contextlib.contextmanager
def counting() -> Iterator[Counter]:
    prev = _active()
    _local.counter = c = Counter()
    try:
        yield c
    finally:
        _local.counter = prev


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Attribute MACs and wall time spent inside the block to ``name``."""
    c = _active()
    if c is None:
        yield
        return
    prev = c.stage
    c.stage = name
    t0 = time.perf_counter()
    try:
        yield
    finally:
        c.seconds[name] += time.perf_counter() - t0
        c.stage = prev
