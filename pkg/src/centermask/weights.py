"""CMKW binary weights format.

Layout (all integers little-endian)::

    b"CMKW" | version u32 | entry count u32 |
    per entry: name length u32 | UTF-8 name | rank u32 | extents u64 * rank | float32 values
"""

from __future__ import annotations

import struct
from typing import Iterable, Union

import numpy as np

MAGIC = b"CMKW"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def dumps(entries: Union[dict, Iterable]) -> bytes:
    items = list(entries.items()) if isinstance(entries, dict) else list(entries)
    seen = set()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, value in items:
        if name in seen:
            raise WeightsFormatError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict:
    view = memoryview(blob)
    pos = 0
    current = "<header>"

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightsFormatError(f"file truncated while reading entry {current}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise WeightsFormatError("bad magic: not a CMKW weights file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightsFormatError(f"unsupported CMKW version {version}")
    out: dict = {}
    for index in range(count):
        current = f"#{index}"
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        current = f"#{index} ({name!r})"
        if name in out:
            raise WeightsFormatError(f"duplicate entry name {name!r}")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        out[name] = data.astype(np.float32)
    if pos != len(view):
        raise WeightsFormatError(f"{len(view) - pos} trailing bytes after the last entry")
    return out


def save(path: str, entries) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path: str) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())


def save_model(path: str, model) -> None:
    save(path, [(n, p.data) for n, p in model.named_parameters()])


def load_model(path: str, model) -> None:
    """Load into ``model``; unknown or missing names raise ``KeyError``."""
    model.load_state_dict(load(path))
