"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"PVCKPT\\x00\\x00"
    version      uint32    currently 1
    n_entries    uint32
    entry * n_entries:
        name_len uint16, name (utf-8)
        kind     uint8     0 = trainable parameter, 1 = buffer
        ndim     uint8, shape uint32 * ndim
        step     uint64    optimizer step counter
        value    float64 * prod(shape)
        m        float64 * prod(shape)   first moment
        v        float64 * prod(shape)   second moment
    meta_len     uint32
    meta         utf-8 JSON object (free-form run state)

Values are stored as raw IEEE-754 doubles so a save/load roundtrip is
bitwise exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError, VersionError
from .params import ParamStore

MAGIC = b"PVCKPT\x00\x00"
VERSION = 1


def dumps(params: ParamStore, meta: dict | None = None) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, p in params.entries.items():
        raw = name.encode("utf-8")
        data = p.value.data
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", 0 if p.trainable else 1, data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(struct.pack("<Q", p.step))
        for arr in (data, p.m, p.v):
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta_raw)))
    out.append(meta_raw)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError("truncated checkpoint", offset=self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, into: ParamStore | None = None) -> tuple[ParamStore, dict]:
    """Parse a checkpoint.

    With ``into``, values and optimizer state are copied into the existing
    entries (names and shapes must match); otherwise a fresh store is built.
    """
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", offset=0)
    version, n = r.unpack("<II")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", offset=len(MAGIC))
    store = ParamStore() if into is None else into
    seen = set()
    for _ in range(n):
        (name_len,) = r.unpack("<H")
        start = r.pos
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid parameter name", offset=start) from exc
        kind, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        (step,) = r.unpack("<Q")
        size = int(np.prod(shape)) if ndim else 1
        arrays = [
            np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
            for _ in range(3)
        ]
        seen.add(name)
        if into is None:
            store.add(name, arrays[0], trainable=(kind == 0))
            entry = store.entries[name]
        else:
            if name not in store.entries:
                raise ParseError(f"checkpoint entry {name!r} not in model", offset=start)
            entry = store.entries[name]
            if entry.value.data.shape != tuple(shape):
                raise ParseError(f"shape mismatch for {name!r}: {shape}", offset=start)
            entry.value.data = arrays[0]
        entry.m, entry.v, entry.step = arrays[1], arrays[2], int(step)
    if into is not None and seen != set(store.entries):
        missing = sorted(set(store.entries) - seen)
        raise ParseError(f"checkpoint lacks entries {missing[:3]}", offset=r.pos)
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError("invalid checkpoint metadata", offset=r.pos) from exc
    if r.pos != len(buf):
        raise ParseError("trailing bytes after checkpoint", offset=r.pos)
    return store, meta


def save(path, params: ParamStore, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load(path, into: ParamStore | None = None) -> tuple[ParamStore, dict]:
    return loads(Path(path).read_bytes(), into)
