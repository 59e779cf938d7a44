"""Virtual RGB capture: project a datacube through a camera's spectral sensitivity.

Each pixel's gray scales are the dot product of its spectrum with the CSS
columns. The image is then divided by its global maximum, and that constant
is kept with every training pair so the mapping can be reproduced.

Pair-set archive layout (a directory)::

    index.json                     list of pairs, their files and constants
    pair_0000_rgb.f32              little-endian float32 planes [3][H][W]
    pair_0000_rgb.png              16-bit PNG of the same image, for viewing
    pair_0000.hsc                  HSC1 cube patch
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hsirecon.calibration import CssMatrix
from hsirecon.datacube import Datacube, extract_patches, patch_grid, read_cube, write_cube
from hsirecon.errors import DegenerateInputError, DimensionError, FormatError, GridError

INDEX = "index.json"
ARCHIVE_FORMAT = "hsirecon-pairs/1"


@dataclass(frozen=True)
class RgbImage:
    values: np.ndarray  # [H, W, 3] in [0, 1]
    norm: float = 1.0  # raw projection was divided by this

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[2] != 3:
            raise DimensionError(f"RGB image must be [H, W, 3], got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def chw(self) -> np.ndarray:
        return self.values.transpose(2, 0, 1)


@dataclass(frozen=True)
class TrainingPair:
    rgb: RgbImage
    cube: Datacube
    source: str = ""
    origin: tuple[int, int] = (0, 0)


def check_grids(cube_wl, css_wl) -> None:
    a = np.asarray(cube_wl, dtype=np.float64)
    b = np.asarray(css_wl, dtype=np.float64)
    if len(a) != len(b):
        raise GridError(f"cube has {len(a)} bands but CSS has {len(b)} wavelengths")
    diff = np.nonzero(a != b)[0]
    if diff.size:
        i = int(diff[0])
        raise GridError(f"wavelength grids disagree at band {i}: cube {a[i]:g} nm vs CSS {b[i]:g} nm")


def project(cube: Datacube, css: CssMatrix) -> np.ndarray:
    """Unnormalized RGB gray scales, [H, W, 3]."""
    check_grids(cube.wavelengths, css.wavelengths)
    lhw = cube.as_layout("LHW").astype(np.float64)
    return np.tensordot(lhw, css.sensitivity, axes=([0], [0]))


def simulate_rgb(cube: Datacube, css: CssMatrix, quantize_8bit: bool = False, norm: float | None = None) -> RgbImage:
    """Project ``cube`` through ``css`` and scale into [0, 1].

    ``norm`` overrides the divisor (default: the image's own maximum).
    ``quantize_8bit`` rounds the result to 1/255 steps.
    """
    raw = project(cube, css)
    if norm is None:
        norm = float(raw.max())
        if not norm > 0:
            raise DegenerateInputError("spectrum-sensitivity product is zero everywhere")
    values = raw / norm
    if quantize_8bit:
        values = np.round(np.clip(values, 0, 1) * 255) / 255
    return RgbImage(values.astype(np.float32), norm)


def build_pair_set(
    cubes: Sequence[Datacube], css: CssMatrix, patch_w: int, patch_h: int,
    quantize_8bit: bool = False, names: Sequence[str] | None = None,
) -> list[TrainingPair]:
    """Simulate each full image, then cut aligned RGB/HSI patches."""
    names = list(names) if names is not None else [f"cube{i}" for i in range(len(cubes))]
    pairs = []
    for name, cube in zip(names, cubes):
        rgb = simulate_rgb(cube, css, quantize_8bit)
        grid = patch_grid(cube.width, cube.height, patch_w, patch_h)
        hsi_patches = extract_patches(cube, patch_w, patch_h)
        for (x0, y0), hp in zip(grid.origins, hsi_patches):
            block = rgb.values[y0:y0 + patch_h, x0:x0 + patch_w, :]
            pairs.append(TrainingPair(RgbImage(block.copy(), rgb.norm), hp, name, (x0, y0)))
    return pairs


def write_pair_set(pairs: Sequence[TrainingPair], out_dir) -> None:
    from hsirecon.pngio import to_uint16, write_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, pair in enumerate(pairs):
        stem = f"pair_{i:04d}"
        planes = np.ascontiguousarray(pair.rgb.chw(), dtype="<f4")
        (out_dir / f"{stem}_rgb.f32").write_bytes(planes.tobytes())
        write_png(out_dir / f"{stem}_rgb.png", to_uint16(pair.rgb.values))
        write_cube(pair.cube, out_dir / f"{stem}.hsc")
        entries.append({
            "name": stem,
            "rgb": f"{stem}_rgb.f32",
            "rgb_png": f"{stem}_rgb.png",
            "cube": f"{stem}.hsc",
            "width": pair.rgb.width,
            "height": pair.rgb.height,
            "norm": pair.rgb.norm,
            "source": pair.source,
            "origin": list(pair.origin),
        })
    index = {"format": ARCHIVE_FORMAT, "pairs": entries}
    tmp = out_dir / (INDEX + ".part")
    tmp.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, out_dir / INDEX)


def read_pair_set(archive_dir) -> list[TrainingPair]:
    archive_dir = Path(archive_dir)
    path = archive_dir / INDEX
    if not path.exists():
        raise FormatError(f"{archive_dir}: no {INDEX}", field="index")
    index = json.loads(path.read_text(encoding="utf-8"))
    if index.get("format") != ARCHIVE_FORMAT:
        raise FormatError(f"{path}: unknown archive format {index.get('format')!r}", field="format")
    pairs = []
    for e in index["pairs"]:
        h, w = int(e["height"]), int(e["width"])
        raw = (archive_dir / e["rgb"]).read_bytes()
        if len(raw) != 4 * 3 * h * w:
            raise FormatError(f"{e['rgb']}: expected {12 * h * w} bytes, got {len(raw)}", field="rgb")
        planes = np.frombuffer(raw, "<f4").reshape(3, h, w)
        cube = read_cube(archive_dir / e["cube"])
        if (cube.width, cube.height) != (w, h):
            raise FormatError(f"{e['cube']}: extent {cube.width}x{cube.height} != {w}x{h}", field="cube")
        rgb = RgbImage(planes.transpose(1, 2, 0).astype(np.float32), float(e["norm"]))
        pairs.append(TrainingPair(rgb, cube, e.get("source", ""), tuple(e.get("origin", (0, 0)))))
    return pairs


# ---------------------------------------------------------------- synthetic data

def gaussian_css(wavelengths, centers=(600.0, 540.0, 460.0), widths=(40.0, 40.0, 35.0), shift: float = 0.0) -> CssMatrix:
    """Three Gaussian response curves (R, G, B), optionally shifted by ``shift`` nm."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    cols = [np.exp(-0.5 * ((wl - (c + shift)) / s) ** 2) for c, s in zip(centers, widths)]
    return CssMatrix(wl, np.stack(cols, axis=1))


def synthetic_cube(width: int, height: int, wavelengths, seed: int = 0, floor: float = 0.2) -> Datacube:
    """Smooth random scene with values in [floor, 1].

    Each pixel's spectrum mixes a few broad Gaussian bumps whose weights
    vary smoothly across the image.
    """
    rng = np.random.default_rng(seed)
    wl = np.asarray(wavelengths, dtype=np.float64)
    span = max(wl[-1] - wl[0], 1.0)
    k = 4
    centers = wl[0] + span * rng.random(k)
    widths = span * (0.15 + 0.25 * rng.random(k))
    basis = np.exp(-0.5 * ((wl[None, :] - centers[:, None]) / widths[:, None]) ** 2)  # [k, L]
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    phase = rng.random((k, 2)) * 2 * np.pi
    freq = 1.0 + 2.0 * rng.random((k, 2))
    weights = 0.5 + 0.5 * np.sin(freq[:, 0, None, None] * 2 * np.pi * xx + phase[:, 0, None, None]) * np.cos(
        freq[:, 1, None, None] * 2 * np.pi * yy + phase[:, 1, None, None])  # [k, H, W]
    lhw = np.tensordot(basis, weights, axes=([0], [0]))  # [L, H, W]
    lhw = (lhw - lhw.min()) / max(lhw.max() - lhw.min(), 1e-12)
    return Datacube.from_lhw((floor + (1.0 - floor) * lhw).astype(np.float32), wl)
