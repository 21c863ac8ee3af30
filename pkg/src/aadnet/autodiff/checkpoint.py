"""Binary checkpoint container for named float32 tensors.

Layout (little endian)::

    b"AADWTSv1"
    repeated until EOF:
        u16 name length, UTF-8 name
        u8 rank, rank x u32 extents
        float32 payload, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AADWTSv1"


class CheckpointError(ValueError):
    pass


def _write_header(fh, name: str, shape: tuple) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"parameter name too long: {name[:40]}...")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", len(shape)))
    fh.write(struct.pack(f"<{len(shape)}I", *shape))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def _read_header(fh):
    head = fh.read(2)
    if not head:
        return None
    if len(head) != 2:
        raise CheckpointError("truncated checkpoint while reading name length")
    (n,) = struct.unpack("<H", head)
    name = _read_exact(fh, n, "name").decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
    return name, tuple(shape)


def save_checkpoint(path, tensors: dict) -> None:
    """Write ``{name: array}`` in insertion order."""
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype="<f4", order="C")
            _write_header(fh, name, a.shape)
            fh.write(a.tobytes())


def load_checkpoint(path) -> dict:
    out = {}
    with open(Path(path), "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a dense checkpoint")
        while True:
            head = _read_header(fh)
            if head is None:
                break
            name, shape = head
            count = int(np.prod(shape, dtype=np.int64))
            buf = _read_exact(fh, 4 * count, name)
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    return out
