"""Reconstruction quality metrics and evaluation artifacts.

Arrays passed instead of :class:`Datacube` objects are taken as
[bands, H, W]. Cubes are compared in that same order whatever their
stored layout.

MRAE divides by ``max(gt, eps)`` so zero ground truth does not blow up;
it is therefore not symmetric in its arguments, unlike RMSE.

Heatmaps use a fixed five-stop colour ramp (``HEATMAP_STOPS``) over the
error range [0, vmax], linearly interpolated and rounded to 8 bits, so
rendered PNGs are byte-comparable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hsirecon.datacube import Datacube
from hsirecon.errors import ConfigError, DimensionError

DEFAULT_EPS = 1e-4

# error fraction of vmax -> RGB
HEATMAP_STOPS = (
    (0.00, (0, 0, 0)),
    (0.25, (0, 0, 255)),
    (0.50, (0, 255, 255)),
    (0.75, (255, 255, 0)),
    (1.00, (255, 0, 0)),
)


def _lhw(x) -> np.ndarray:
    if isinstance(x, Datacube):
        return np.asarray(x.as_layout("LHW"), dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _pair(p, gt) -> tuple[np.ndarray, np.ndarray]:
    a, b = _lhw(p), _lhw(gt)
    if a.shape != b.shape:
        raise DimensionError(f"prediction {a.shape} and ground truth {b.shape} differ in shape")
    return a, b


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")


def relative_error(p, gt, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Elementwise |p - gt| / max(gt, eps)."""
    _check_eps(eps)
    a, b = _pair(p, gt)
    return np.abs(a - b) / np.maximum(b, eps)


def mrae(p, gt, eps: float = DEFAULT_EPS) -> float:
    return float(np.mean(relative_error(p, gt, eps)))


def rmse(p, gt) -> float:
    a, b = _pair(p, gt)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def band_mrae(p, gt, eps: float = DEFAULT_EPS) -> np.ndarray:
    """MRAE of each band separately."""
    rel = relative_error(p, gt, eps)
    return rel.reshape(rel.shape[0], -1).mean(axis=1)


def heatmap_lut() -> np.ndarray:
    """The 256-entry colour table behind :func:`render_heatmap`."""
    pos = np.array([s[0] for s in HEATMAP_STOPS])
    cols = np.array([s[1] for s in HEATMAP_STOPS], dtype=np.float64)
    t = np.arange(256) / 255.0
    lut = np.stack([np.interp(t, pos, cols[:, c]) for c in range(3)], axis=1)
    return np.round(lut).astype(np.uint8)


def render_heatmap(err: np.ndarray, vmax: float = 1.0) -> np.ndarray:
    """Map an [H, W] error image to [H, W, 3] uint8 colours; errors above vmax saturate."""
    if not vmax > 0:
        raise ConfigError(f"vmax must be positive, got {vmax}")
    idx = np.round(np.clip(np.asarray(err, dtype=np.float64) / vmax, 0.0, 1.0) * 255).astype(np.intp)
    return heatmap_lut()[idx]


def band_error_map(p, gt, band: int, eps: float = DEFAULT_EPS, vmax: float = 1.0):
    """Per-pixel relative error of one band and its rendered false-colour image."""
    a, b = _pair(p, gt)
    if not 0 <= band < a.shape[0]:
        raise IndexError(f"band {band} out of range for {a.shape[0]} bands")
    _check_eps(eps)
    err = np.abs(a[band] - b[band]) / np.maximum(b[band], eps)
    return err, render_heatmap(err, vmax)


def spectral_trace(cube: Datacube, x: int, y: int) -> list[tuple[float, float]]:
    """(wavelength, value) pairs for the pixel at column x, row y."""
    if not (0 <= x < cube.width and 0 <= y < cube.height):
        raise IndexError(f"pixel ({x}, {y}) outside {cube.width}x{cube.height} cube")
    spectrum = cube.as_layout("LHW")[:, y, x]
    return [(float(w), float(v)) for w, v in zip(cube.wavelengths, spectrum)]


def trace_csv(wavelengths, columns: dict[str, Sequence[float]]) -> str:
    """CSV text with a wavelength column followed by one column per named spectrum."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["wavelength_nm", *columns])
    for i, w in enumerate(wavelengths):
        out.writerow([repr(float(w)), *(repr(float(col[i])) for col in columns.values())])
    return buf.getvalue()


@dataclass
class EvalReport:
    names: list[str]
    image_mrae: list[float]
    image_rmse: list[float]
    mrae: float
    rmse: float
    band_mrae: np.ndarray
    wavelengths: np.ndarray
    n_elements: int
    eps: float = DEFAULT_EPS
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"images     {len(self.names)}",
            f"elements   {self.n_elements}",
            f"eps        {self.eps!r}",
            f"MRAE       {self.mrae:.6f}",
            f"RMSE       {self.rmse:.6f}",
            "",
            "image                            MRAE        RMSE",
        ]
        for n, m, r in zip(self.names, self.image_mrae, self.image_rmse):
            lines.append(f"{n:<28} {m:>10.6f}  {r:>10.6f}")
        lines += ["", "band_nm      MRAE"]
        for w, m in zip(self.wavelengths, self.band_mrae):
            lines.append(f"{w:>8.2f}  {m:>10.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["image", "mrae", "rmse"])
        for n, m, r in zip(self.names, self.image_mrae, self.image_rmse):
            out.writerow([n, repr(m), repr(r)])
        out.writerow(["ALL", repr(self.mrae), repr(self.rmse)])
        return buf.getvalue()

    def band_csv(self) -> str:
        return trace_csv(self.wavelengths, {"mrae": self.band_mrae})


def evaluate(pairs: Sequence[tuple[str, Datacube, Datacube]], eps: float = DEFAULT_EPS) -> EvalReport:
    """Metrics for (name, prediction, ground truth) triples.

    Aggregates are taken over every element of every image, so larger
    images weigh more. All cubes must share one wavelength grid.
    """
    if not pairs:
        raise ConfigError("nothing to evaluate")
    wl = pairs[0][2].wavelengths
    names, im, ir = [], [], []
    rel_sum = np.zeros(len(wl))
    sq_sum, count, per_band = 0.0, 0, 0
    for name, p, gt in pairs:
        if len(gt.wavelengths) != len(wl) or not np.array_equal(gt.wavelengths, wl):
            raise DimensionError(f"{name}: wavelength grid differs from the first image")
        rel = relative_error(p, gt, eps)
        a, b = _pair(p, gt)
        names.append(name)
        im.append(float(rel.mean()))
        ir.append(float(np.sqrt(np.mean((a - b) ** 2))))
        rel_sum += rel.reshape(rel.shape[0], -1).sum(axis=1)
        sq_sum += float(np.sum((a - b) ** 2))
        count += rel.size
        per_band += rel[0].size
    return EvalReport(
        names=names, image_mrae=im, image_rmse=ir,
        mrae=float(rel_sum.sum() / count), rmse=float(np.sqrt(sq_sum / count)),
        band_mrae=rel_sum / per_band, wavelengths=np.asarray(wl), n_elements=count, eps=eps,
    )
