"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"M3NC"            magic
    u16                format version
    u32                entry count
    per entry:
        u16            name length in bytes
        bytes          UTF-8 name
        u8             dtype tag (see DTYPE_TAGS)
        u8             rank
        u64 * rank     dims
        raw            values, little-endian, C order
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"M3NC"
VERSION = 1

DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAG_OF = {dt: tag for tag, dt in DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def _tag(arr):
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    for tag, known in DTYPE_TAGS.items():
        if known == dt or known.kind == dt.kind and known.itemsize == dt.itemsize:
            return tag
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def dumps(state):
    """Serialize a name -> ndarray mapping (insertion order is kept)."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        tag = _tag(arr)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag]).tobytes())
    return b"".join(parts)


def loads(buf):
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        tag, rank = struct.unpack_from("<BB", view, pos)
        pos += 2
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} for {name}")
        dims = struct.unpack_from(f"<{rank}Q", view, pos)
        pos += 8 * rank
        dt = DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated checkpoint while reading {name}")
        state[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
        pos += nbytes
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last entry")
    return state


def save(path, state):
    Path(path).write_bytes(dumps(state))


def load(path):
    return loads(Path(path).read_bytes())
