"""PTN1 checkpoint files.

Layout (little-endian)::

    b"PTN1"
    u32 len, utf-8 JSON config block (every PtnetConfig field, sorted keys)
    u32 record count
    per record: u32 name len, utf-8 name, u32 ndim, u32 dims[ndim], f32 values

Records hold every named parameter followed by the batch-norm running
statistics (names ending in ``running_mean`` / ``running_var``).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from hsirecon.errors import CheckpointError, FormatError
from hsirecon.ptnet.model import PTNet, PtnetConfig

MAGIC = b"PTN1"


def encode_checkpoint(model: PTNet) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    records = [(n, p.data) for n, p in model.named_parameters()] + list(model.named_buffers())
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(records))]
    for name, arr in records:
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(model: PTNet, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(encode_checkpoint(model))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", field=what)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_checkpoint(path) -> tuple[PtnetConfig, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC!r}", field="magic")
    try:
        cfg_dict = json.loads(r.take(r.u32("config"), "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable config block ({exc})", field="config") from exc
    config = PtnetConfig.from_dict(cfg_dict)
    records = {}
    for _ in range(r.u32("records")):
        name = r.take(r.u32("name"), "name").decode("utf-8")
        ndim = r.u32("shape")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "shape"))
        count = int(np.prod(shape)) if ndim else 1
        records[name] = np.frombuffer(r.take(4 * count, "values"), "<f4").reshape(shape)
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes", field="records")
    return config, records


def _apply(model: PTNet, records: dict[str, np.ndarray], path) -> None:
    dtype = model.parameters()[0].dtype
    expected = {n: p for n, p in model.named_parameters()}
    missing = [n for n in expected if n not in records]
    if missing:
        raise FormatError(f"{path}: missing parameter record(s) {', '.join(missing)}", field="records")
    for name, p in expected.items():
        arr = records[name]
        if arr.shape != p.shape:
            raise FormatError(f"{path}: {name} has shape {arr.shape}, model expects {p.shape}", field="records")
        p.data = arr.astype(dtype)
    owners = {}
    for m_name, mod in _named_modules(model):
        for b in mod._buffers:
            owners[f"{m_name}{b}"] = (mod, b)
    for name, (mod, b) in owners.items():
        if name in records:
            object.__setattr__(mod, b, records[name].astype(dtype))


def _named_modules(module, prefix=""):
    yield prefix, module
    for name, child in module._children.items():
        yield from _named_modules(child, f"{prefix}{name}.")


def load_weights(path, config: PtnetConfig) -> PTNet:
    """Load a checkpoint, insisting that its config matches ``config``."""
    stored, records = read_checkpoint(path)
    a, b = stored.to_dict(), config.to_dict()
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    if diff:
        detail = ", ".join(f"{k} (file {a.get(k)!r} vs requested {b.get(k)!r})" for k in diff)
        raise CheckpointError(f"{path}: config mismatch: {detail}", diff)
    model = PTNet(config)
    _apply(model, records, path)
    return model


def load_checkpoint(path) -> PTNet:
    """Load a checkpoint using the config stored inside it."""
    config, records = read_checkpoint(path)
    model = PTNet(config)
    _apply(model, records, path)
    return model
