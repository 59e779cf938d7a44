"""PNG read/write for 8- and 16-bit RGB frames (via pypng)."""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
import png

from hsirecon.errors import FormatError


def read_png(path) -> np.ndarray:
    """Return an [H, W, 3] uint8 or uint16 array."""
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
    except (png.FormatError, png.ChunkError) as exc:
        raise FormatError(f"{path}: {exc}", field="png") from exc
    planes = info["planes"]
    dtype = np.uint16 if info["bitdepth"] > 8 else np.uint8
    arr = np.vstack([np.asarray(r, dtype=dtype) for r in rows]).reshape(h, w, planes)
    if planes == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif planes in (2, 4):
        arr = arr[:, :, : planes - 1]
        if planes == 2:
            arr = np.repeat(arr, 3, axis=2)
    return arr


def encode_png(rgb: np.ndarray) -> bytes:
    """Encode an [H, W, 3] uint8/uint16 array; output bytes are deterministic."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3], got {rgb.shape}")
    bitdepth = 16 if rgb.dtype == np.uint16 else 8
    h, w = rgb.shape[:2]
    buf = io.BytesIO()
    png.Writer(w, h, greyscale=False, bitdepth=bitdepth, compression=9).write(
        buf, rgb.reshape(h, w * 3).tolist()
    )
    return buf.getvalue()


def write_png(path, rgb: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(encode_png(rgb))
    os.replace(tmp, path)


def to_uint16(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 16-bit codes."""
    return np.round(np.clip(values, 0.0, 1.0) * 65535).astype(np.uint16)
