"""Binary checkpoint format for trained models.

Layout (all integers little-endian)::

    b"QSTNN1"                  magic
    u8                         mode tag (0 = rfb, 1 = msnn)
    u32 + bytes                JSON metadata: {"config": ..., "meta": ...}
    u32                        number of arrays
    per array: u16 + name, u8 ndim, ndim * u32 dims
    per array: float64 data, little-endian, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError
from .models import build_model, config_dict

MAGIC = b"QSTNN1"
MODES = ("rfb", "msnn")


def _pack_header(mode, config, meta, arrays):
    blob = json.dumps({"config": config, "meta": meta or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<B", MODES.index(mode)), struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
    return b"".join(parts)


def dumps(model, meta=None):
    arrays = model.state_arrays()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    return _pack_header(model.mode, config_dict(model), meta, arrays) + body


def save(model, path, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model, meta))
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data, expect_mode=None):
    """Rebuild ``(model, meta)`` from checkpoint bytes."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a qstnet checkpoint (bad magic)")
    (tag,) = r.unpack("<B")
    if tag >= len(MODES):
        raise CheckpointError(f"unknown model tag {tag}")
    mode = MODES[tag]
    if expect_mode is not None and mode != expect_mode:
        raise CheckpointError(f"checkpoint holds a {mode} model, expected {expect_mode}")
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint metadata") from exc
    (count,) = r.unpack("<I")
    shapes = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shapes[name] = r.unpack(f"<{ndim}I")
    arrays = {}
    for name, shape in shapes.items():
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint data")
    try:
        model = build_model(mode, header["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint config does not describe a {mode} model: {exc}") from exc
    expected = model.state_arrays()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) ^ set(arrays))
        raise CheckpointError(f"checkpoint arrays do not match the model: {missing}")
    for name, arr in expected.items():
        if arr.shape != arrays[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} vs model {arr.shape}")
    model.load_arrays(arrays)
    return model, header.get("meta", {})


def load(path, expect_mode=None):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data, expect_mode)
