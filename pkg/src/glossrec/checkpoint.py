"""Named-parameter checkpoint serialization.

Binary layout (little-endian): magic ``CVTS``, format version u32, entry
count u32, then per entry a u16 name length + UTF-8 name, rank u8, the
dims as u32s, and the values as float64. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, TruncatedFileError

CHECKPOINT_MAGIC = b"CVTS"
CHECKPOINT_VERSION = 1


class Checkpoint:
    """An ordered name -> float64 array collection."""

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self.entries: dict[str, np.ndarray] = {}
        for name, arr in (entries or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        self.entries[name] = np.asarray(arr, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def scalar(self, name: str) -> float:
        return float(self.entries[name])

    def names(self) -> list[str]:
        return list(self.entries)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(ckpt.entries)))
        for name, arr in ckpt.entries.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}")
    off = 4

    def pull(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise TruncatedFileError(f"{path}: truncated at byte {off}")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    _version, count = pull("<II")
    ckpt = Checkpoint()
    for _ in range(count):
        (name_len,) = pull("<H")
        if off + name_len > len(blob):
            raise TruncatedFileError(f"{path}: truncated entry name")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = pull("<B")
        dims = pull(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise TruncatedFileError(f"{path}: truncated values for {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += nbytes
        ckpt.entries[name] = arr.copy()
    return ckpt
