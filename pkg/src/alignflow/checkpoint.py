"""Flat binary checkpoint container.

Layout (all integers little-endian, documented in docs/checkpoint_format.md):

    bytes 0..7   magic b"AFCKPT01"
    bytes 8..11  uint32 entry count
    per entry:
        uint16   name length N
        N bytes  UTF-8 entry name
        uint8    rank (number of dims; 0 for scalars)
        rank x uint32  dims
        8 * prod(dims) bytes  float64 little-endian values, row-major

Entries are written sorted by name so identical state always produces
identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AFCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, entries: dict[str, np.ndarray]):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype=np.float64)
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise CheckpointError(f"entry name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise CheckpointError(f"entry rank too large: {name!r}")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (count,) = struct.unpack_from("<I", blob, 8)
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        out[name] = arr.reshape(dims) if rank else arr.reshape(())
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out
