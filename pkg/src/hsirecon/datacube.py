"""Hyperspectral datacubes: layouts, transposition, patching and the HSC1 format.

A cube's ``values`` array is stored with its axes in the order named by its
layout tag. Coordinates are always (x, y, band) with x along the width W and
y along the height H:

    ``"WHL"``  values[x, y, band]   (spectral axis last)
    ``"WLH"``  values[x, band, y]   (height last)
    ``"LHW"``  values[band, y, x]   (width last; the model's channel-first input)

HSC1 file layout (little-endian)::

    b"HSC1"
    u32 W, u32 H, u32 n_bands
    f32 wavelengths[n_bands]            strictly increasing, nm
    f32 values[n_bands][H][W]           band-sequential, row-major planes
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hsirecon.errors import ConfigError, DegenerateInputError, DimensionError, FormatError

MAGIC = b"HSC1"
LAYOUTS = ("WHL", "WLH", "LHW")
_ALIASES = {"WHλ": "WHL", "WλH": "WLH", "λHW": "LHW"}
# position of (x, y, band) inside each layout's axis order
_AXIS_OF = {lay: tuple(lay.index(k) for k in "WHL") for lay in LAYOUTS}


def canonical_layout(tag: str) -> str:
    tag = _ALIASES.get(tag, tag)
    if tag not in LAYOUTS:
        raise ConfigError(f"unsupported cube layout {tag!r}; expected one of {LAYOUTS}")
    return tag


def layout_permutation(src: str, dst: str) -> tuple[int, ...]:
    """Axis permutation taking an array in layout ``src`` to layout ``dst``."""
    src, dst = canonical_layout(src), canonical_layout(dst)
    return tuple(src.index(k) for k in dst)


@dataclass(frozen=True)
class Datacube:
    values: np.ndarray
    wavelengths: np.ndarray
    layout: str = "WHL"

    def __post_init__(self):
        object.__setattr__(self, "layout", canonical_layout(self.layout))
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise DimensionError(f"datacube values must be 3-D, got shape {values.shape}")
        wl = np.asarray(self.wavelengths, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "wavelengths", wl)
        if len(wl) != self.n_bands:
            raise DimensionError(f"{len(wl)} wavelengths for {self.n_bands} bands")
        if len(wl) > 1 and not np.all(np.diff(wl) > 0):
            raise ConfigError("wavelengths must be strictly increasing")

    @property
    def width(self) -> int:
        return self.values.shape[_AXIS_OF[self.layout][0]]

    @property
    def height(self) -> int:
        return self.values.shape[_AXIS_OF[self.layout][1]]

    @property
    def n_bands(self) -> int:
        return self.values.shape[_AXIS_OF[self.layout][2]]

    def at(self, x: int, y: int, band: int) -> float:
        idx = [0, 0, 0]
        for coord, axis in zip((x, y, band), _AXIS_OF[self.layout]):
            idx[axis] = coord
        return float(self.values[tuple(idx)])

    def as_layout(self, layout: str) -> np.ndarray:
        """Values reordered into ``layout`` (a view when possible)."""
        return self.values.transpose(layout_permutation(self.layout, layout))

    def band(self, index: int) -> np.ndarray:
        """One band as an [H, W] image."""
        if not 0 <= index < self.n_bands:
            raise IndexError(f"band {index} out of range for {self.n_bands} bands")
        return self.as_layout("LHW")[index]

    @classmethod
    def from_lhw(cls, values, wavelengths) -> "Datacube":
        return cls(np.asarray(values), wavelengths, "LHW")


@dataclass(frozen=True)
class PatchGrid:
    patch_width: int
    patch_height: int
    rows: int
    cols: int
    origins: list[tuple[int, int]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.rows * self.cols


def transpose_cube(cube: Datacube, target_layout: str) -> Datacube:
    target = canonical_layout(target_layout)
    if target == cube.layout:
        return cube
    return Datacube(cube.as_layout(target), cube.wavelengths, target)


def patch_grid(width: int, height: int, patch_w: int, patch_h: int) -> PatchGrid:
    """Row-major tiling of a ``width`` x ``height`` image."""
    if patch_w < 1 or patch_h < 1:
        raise ConfigError(f"patch size {patch_w}x{patch_h} must be positive")
    if width % patch_w:
        raise ConfigError(f"patch width {patch_w} does not divide image width {width}")
    if height % patch_h:
        raise ConfigError(f"patch height {patch_h} does not divide image height {height}")
    rows, cols = height // patch_h, width // patch_w
    origins = [(c * patch_w, r * patch_h) for r in range(rows) for c in range(cols)]
    return PatchGrid(patch_w, patch_h, rows, cols, origins)


def extract_patches(cube: Datacube, patch_w: int, patch_h: int) -> list[Datacube]:
    grid = patch_grid(cube.width, cube.height, patch_w, patch_h)
    whl = cube.as_layout("WHL")
    out = []
    for x0, y0 in grid.origins:
        block = whl[x0:x0 + patch_w, y0:y0 + patch_h, :]
        out.append(transpose_cube(Datacube(block.copy(), cube.wavelengths, "WHL"), cube.layout))
    return out


def assemble_patches(patches: list[Datacube], rows: int, cols: int) -> Datacube:
    """Inverse of :func:`extract_patches` for a ``rows`` x ``cols`` grid."""
    if len(patches) != rows * cols:
        raise DimensionError(f"{len(patches)} patches for a {rows}x{cols} grid")
    whl = [p.as_layout("WHL") for p in patches]
    strips = [np.concatenate(whl[r * cols:(r + 1) * cols], axis=0) for r in range(rows)]
    full = np.concatenate(strips, axis=1)
    return transpose_cube(Datacube(full, patches[0].wavelengths, "WHL"), patches[0].layout)


def normalize(cube: Datacube) -> Datacube:
    """Divide by the global maximum so values land in [0, 1] with max exactly 1."""
    if cube.values.size == 0:
        raise DegenerateInputError("cannot normalize an empty cube")
    peak = cube.values.max()
    if not peak > 0:
        raise DegenerateInputError("cube has no positive value to normalize by")
    if peak == 1:
        return cube
    return replace(cube, values=cube.values / peak)


def write_cube(cube: Datacube, path) -> None:
    lhw = np.ascontiguousarray(cube.as_layout("LHW"), dtype="<f4")
    header = MAGIC + struct.pack("<III", cube.width, cube.height, cube.n_bands)
    payload = header + cube.wavelengths.astype("<f4").tobytes() + lhw.tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_cube(path, layout: str = "LHW") -> Datacube:
    """Read an HSC1 file; the result uses ``layout`` (band-first by default)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}", field="magic")
    if len(raw) < 16:
        raise FormatError(f"{path}: header truncated", field="header")
    w, h, nb = struct.unpack_from("<III", raw, 4)
    if min(w, h, nb) == 0:
        raise FormatError(f"{path}: zero extent in header ({w}x{h}x{nb})", field="header")
    need = 16 + 4 * nb + 4 * w * h * nb
    if len(raw) < 16 + 4 * nb:
        raise FormatError(f"{path}: wavelength table truncated", field="wavelengths")
    if len(raw) != need:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {need}", field="values")
    wl = np.frombuffer(raw, "<f4", nb, 16).astype(np.float64)
    if nb > 1 and not np.all(np.diff(wl) > 0):
        raise FormatError(f"{path}: wavelengths are not strictly increasing", field="wavelengths")
    values = np.frombuffer(raw, "<f4", w * h * nb, 16 + 4 * nb).reshape(nb, h, w).astype(np.float32)
    return transpose_cube(Datacube(values, wl, "LHW"), layout)
