"""Camera spectral sensitivity (CSS) from a monochromator wavelength sweep.

The camera records one frame per sweep wavelength with white balance fixed
at 1:1:1 and a constant exposure. Averaging each frame over a region of
interest gives the raw RGB response at that wavelength; dividing by the
lamp's relative power and scaling the table to a peak of 1 gives the CSS.

The camera is assumed to respond linearly (no gamma) during the sweep.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from hsirecon.errors import (
    CalibrationError,
    DuplicateWavelengthError,
    ExposureDriftError,
    FormatError,
    GainError,
    MissingWavelengthError,
    UnexpectedWavelengthError,
)

CSS_HEADER = ["wavelength_nm", "R", "G", "B"]
LAMP_HEADER = ["wavelength_nm", "power"]
SIDECAR = "sweep.json"
_FRAME_RE = re.compile(r"^wl_(\d+(?:\.\d+)?)\.png$")


class SaturationWarning(UserWarning):
    def __init__(self, wavelength, channels):
        super().__init__(f"roi saturated at {wavelength:g} nm in channel(s) {''.join(channels)}")
        self.wavelength = wavelength
        self.channels = channels


class Roi(NamedTuple):
    x: int
    y: int
    width: int
    height: int

    @classmethod
    def parse(cls, text: str) -> "Roi":
        parts = [int(p) for p in text.replace(" ", "").split(",")]
        if len(parts) != 4:
            raise ValueError(f"roi must be x,y,width,height; got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class SweepCapture:
    wavelength: float
    frame: np.ndarray  # [H, W, 3]
    exposure_ms: float
    rgb_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class LampSpectrum:
    wavelengths: np.ndarray
    relative_power: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        pw = np.asarray(self.relative_power, dtype=np.float64)
        if wl.ndim != 1 or wl.shape != pw.shape or len(wl) == 0:
            raise CalibrationError("lamp spectrum needs matching, non-empty wavelength and power columns")
        if len(wl) > 1 and not np.all(np.diff(wl) > 0):
            raise CalibrationError("lamp wavelengths must be strictly increasing")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "relative_power", pw)

    def power_at(self, wavelengths) -> np.ndarray:
        """Linearly interpolated power; raises outside the tabulated range or where power <= 0."""
        wl = np.atleast_1d(np.asarray(wavelengths, dtype=np.float64))
        lo, hi = self.wavelengths[0], self.wavelengths[-1]
        outside = wl[(wl < lo) | (wl > hi)]
        if outside.size:
            raise CalibrationError(f"lamp spectrum does not cover {outside[0]:g} nm (table spans {lo:g}-{hi:g})")
        power = np.interp(wl, self.wavelengths, self.relative_power)
        bad = wl[power <= 0]
        if bad.size:
            raise CalibrationError(f"lamp power is not positive at {bad[0]:g} nm")
        return power


@dataclass(frozen=True)
class CssMatrix:
    wavelengths: np.ndarray
    sensitivity: np.ndarray  # [n_bands, 3]

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64).ravel()
        s = np.asarray(self.sensitivity, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] != len(wl):
            raise CalibrationError(f"CSS must be {len(wl)} x 3, got {s.shape}")
        if len(wl) == 0:
            raise CalibrationError("CSS matrix is empty")
        if len(wl) > 1 and not np.all(np.diff(wl) > 0):
            raise CalibrationError("CSS wavelengths must be strictly increasing")
        if np.any(s < 0):
            raise CalibrationError("CSS entries must be non-negative")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "sensitivity", s)

    @property
    def n_bands(self) -> int:
        return len(self.wavelengths)


@dataclass
class CalibrationResult:
    css: CssMatrix
    raw_responses: np.ndarray  # [n, 3], dark-subtracted ROI means
    lamp_power: np.ndarray  # [n]
    saturated: list[float] = field(default_factory=list)
    pixel_css: np.ndarray | None = None  # [n, roi_h, roi_w, 3] when requested


def sweep_grid(start: float = 400, stop: float = 650, step: float = 1) -> np.ndarray:
    """Inclusive wavelength grid; the default 400-650 nm at 1 nm has 251 points."""
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count, dtype=np.float64)


def validate_sweep(captures: Sequence[SweepCapture], expected_grid) -> None:
    grid = [float(w) for w in expected_grid]
    seen: dict[float, int] = {}
    dups = []
    for cap in captures:
        wl = float(cap.wavelength)
        seen[wl] = seen.get(wl, 0) + 1
        if seen[wl] == 2:
            dups.append(wl)
    if dups:
        raise DuplicateWavelengthError(f"duplicate captures at {_fmt(dups)} nm", dups)
    missing = [w for w in grid if w not in seen]
    if missing:
        raise MissingWavelengthError(f"missing captures at {_fmt(missing)} nm", missing)
    expected = set(grid)
    extra = [w for w in seen if w not in expected]
    if extra:
        raise UnexpectedWavelengthError(f"captures off the expected grid at {_fmt(extra)} nm", extra)

    ref = float(captures[0].exposure_ms)
    drift = [float(c.wavelength) for c in captures if float(c.exposure_ms) != ref]
    if drift:
        raise ExposureDriftError(
            f"exposure differs from {ref:g} ms at {_fmt(drift)} nm; exposure must be constant", drift
        )
    bad_gain = [c for c in captures if tuple(float(g) for g in c.rgb_gain) != (1.0, 1.0, 1.0)]
    if bad_gain:
        c = bad_gain[0]
        raise GainError(
            f"RGB gain {tuple(c.rgb_gain)} at {c.wavelength:g} nm; white balance must be fixed at 1:1:1",
            [float(b.wavelength) for b in bad_gain],
        )


def _fmt(values) -> str:
    return ", ".join(f"{v:g}" for v in values)


def _roi_block(frame: np.ndarray, roi: Roi) -> np.ndarray:
    h, w = frame.shape[:2]
    if roi.width < 1 or roi.height < 1:
        raise IndexError(f"roi {tuple(roi)} is empty")
    if roi.x < 0 or roi.y < 0 or roi.x + roi.width > w or roi.y + roi.height > h:
        raise IndexError(f"roi {tuple(roi)} exceeds frame bounds {w}x{h}")
    return frame[roi.y:roi.y + roi.height, roi.x:roi.x + roi.width, :3]


def default_max_code(frame: np.ndarray) -> float | None:
    if frame.dtype == np.uint8:
        return 255.0
    if frame.dtype == np.uint16:
        return 65535.0
    return None


def extract_response(
    capture: SweepCapture, roi: Roi, dark_level: float = 0.0, max_code: float | None = None
) -> tuple[float, float, float]:
    """Mean RGB gray scale over ``roi`` after dark-level subtraction (clamped at 0).

    Emits :class:`SaturationWarning` when every roi pixel of a channel sits at
    ``max_code`` (default: the frame dtype's maximum).
    """
    block = _roi_block(capture.frame, roi)
    top = default_max_code(capture.frame) if max_code is None else max_code
    if top is not None:
        sat = [ch for i, ch in enumerate("RGB") if np.all(block[..., i] >= top)]
        if sat:
            warnings.warn(SaturationWarning(float(capture.wavelength), sat), stacklevel=2)
    values = np.clip(block.astype(np.float64) - dark_level, 0.0, None)
    return tuple(float(v) for v in values.mean(axis=(0, 1)))


def compensate_and_assemble(wavelengths, responses, lamp: LampSpectrum) -> CssMatrix:
    """Divide each response by the lamp power and scale the table to a peak of 1."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    resp = np.asarray(responses, dtype=np.float64)
    if resp.shape != (len(wl), 3):
        raise CalibrationError(f"expected {len(wl)} x 3 responses, got {resp.shape}")
    power = lamp.power_at(wl)
    css = resp / power[:, None]
    peak = css.max()
    if not peak > 0:
        raise CalibrationError("sweep produced no positive response")
    dead = [ch for i, ch in enumerate("RGB") if not np.any(css[:, i] > 0)]
    if dead:
        raise CalibrationError(f"channel(s) {''.join(dead)} never responded during the sweep")
    return CssMatrix(wl, css / peak)


def calibrate(
    captures: Sequence[SweepCapture],
    lamp: LampSpectrum,
    roi: Roi,
    expected_grid=None,
    dark_level: float = 0.0,
    per_pixel: bool = False,
) -> CalibrationResult:
    """Validate a sweep, extract ROI responses, compensate by the lamp and normalize."""
    caps = sorted(captures, key=lambda c: float(c.wavelength))
    if not caps:
        raise CalibrationError("sweep contains no captures")
    grid = [c.wavelength for c in caps] if expected_grid is None else expected_grid
    validate_sweep(caps, grid)
    wl = np.array([float(c.wavelength) for c in caps])
    saturated = []
    responses = []
    for cap in caps:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SaturationWarning)
            responses.append(extract_response(cap, roi, dark_level))
        if any(issubclass(w.category, SaturationWarning) for w in caught):
            saturated.append(float(cap.wavelength))
    responses = np.array(responses)
    css = compensate_and_assemble(wl, responses, lamp)
    power = lamp.power_at(wl)
    pixel_css = None
    if per_pixel:
        blocks = np.stack([np.clip(_roi_block(c.frame, roi).astype(np.float64) - dark_level, 0, None) for c in caps])
        pixel_css = blocks / power[:, None, None, None]
        pixel_css /= pixel_css.max()
    return CalibrationResult(css, responses, power, saturated, pixel_css)


def synthetic_sweep(
    css: CssMatrix, lamp: LampSpectrum, height: int = 4, width: int = 4,
    exposure_ms: float = 20.0, scale: float = 1.0,
) -> list[SweepCapture]:
    """Uniform float frames with value ``scale * css * lamp`` at each sweep wavelength."""
    power = lamp.power_at(css.wavelengths)
    out = []
    for wl, row, p in zip(css.wavelengths, css.sensitivity, power):
        frame = np.broadcast_to(scale * row * p, (height, width, 3)).copy()
        out.append(SweepCapture(float(wl), frame, exposure_ms))
    return out


# ---------------------------------------------------------------- file formats

def _parse_table(path, header: list[str], kind: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows or [c.strip() for c in rows[0]] != header:
        raise FormatError(f"{path}: {kind} header must be {','.join(header)}", field="header")
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: {kind} table has no rows", field="rows")
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric {kind} entry ({exc})", field="value") from exc
    if table.shape[1] != len(header):
        raise FormatError(f"{path}: expected {len(header)} columns", field="columns")
    wl = table[:, 0]
    if len(wl) > 1 and not np.all(np.diff(wl) > 0):
        raise FormatError(f"{path}: wavelengths are not strictly increasing", field="wavelength_nm")
    return table


def read_css(path) -> CssMatrix:
    table = _parse_table(path, CSS_HEADER, "CSS")
    neg = table[:, 1:] < 0
    if neg.any():
        row = int(np.argwhere(neg)[0][0])
        raise FormatError(f"{path}: negative sensitivity at {table[row, 0]:g} nm", field="sensitivity")
    return CssMatrix(table[:, 0], table[:, 1:])


def _write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_css(css: CssMatrix) -> str:
    lines = [",".join(CSS_HEADER)]
    for wl, row in zip(css.wavelengths, css.sensitivity):
        lines.append(",".join([f"{wl:.10g}"] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def write_css(css: CssMatrix, path) -> None:
    _write_text(path, format_css(css))


def read_lamp(path) -> LampSpectrum:
    if not Path(path).exists():
        raise FileNotFoundError(f"lamp spectrum not found: {path}")
    table = _parse_table(path, LAMP_HEADER, "lamp")
    return LampSpectrum(table[:, 0], table[:, 1])


def write_lamp(lamp: LampSpectrum, path) -> None:
    lines = [",".join(LAMP_HEADER)]
    lines += [f"{w:.10g},{float(p)!r}" for w, p in zip(lamp.wavelengths, lamp.relative_power)]
    _write_text(path, "\n".join(lines) + "\n")


def resample_css(css: CssMatrix, wavelengths) -> CssMatrix:
    """Linear interpolation of each channel onto ``wavelengths`` (must lie inside the CSS range)."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    if wl.min() < css.wavelengths[0] or wl.max() > css.wavelengths[-1]:
        raise CalibrationError(
            f"target grid {wl.min():g}-{wl.max():g} nm exceeds CSS range "
            f"{css.wavelengths[0]:g}-{css.wavelengths[-1]:g} nm"
        )
    cols = [np.interp(wl, css.wavelengths, css.sensitivity[:, c]) for c in range(3)]
    return CssMatrix(wl, np.stack(cols, axis=1))


def load_sweep(sweep_dir) -> list[SweepCapture]:
    """Read ``wl_<nm>.png`` frames plus the ``sweep.json`` sidecar.

    The sidecar holds ``exposure_ms`` and ``rgb_gain`` for the whole sweep and
    an optional ``captures`` map from wavelength string to per-frame overrides.
    """
    from hsirecon.pngio import read_png

    sweep_dir = Path(sweep_dir)
    meta_path = sweep_dir / SIDECAR
    if not meta_path.exists():
        raise FormatError(f"{sweep_dir}: sweep metadata {SIDECAR} not found", field="sidecar")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    overrides = meta.get("captures", {})
    caps = []
    for entry in sorted(sweep_dir.iterdir()):
        m = _FRAME_RE.match(entry.name)
        if not m:
            continue
        key = m.group(1)
        wl = float(key)
        extra = overrides.get(key, overrides.get(f"{wl:g}", {}))
        caps.append(SweepCapture(
            wl,
            read_png(entry),
            float(extra.get("exposure_ms", meta["exposure_ms"])),
            tuple(float(g) for g in extra.get("rgb_gain", meta.get("rgb_gain", [1, 1, 1]))),
        ))
    if not caps:
        raise FormatError(f"{sweep_dir}: no wl_<nm>.png frames", field="frames")
    return caps


def save_sweep(captures: Sequence[SweepCapture], sweep_dir) -> None:
    """Write integer-valued frames as 16-bit PNGs and the sidecar."""
    from hsirecon.pngio import write_png

    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    base = captures[0]
    meta = {"exposure_ms": float(base.exposure_ms), "rgb_gain": [float(g) for g in base.rgb_gain], "captures": {}}
    for cap in captures:
        name = f"{cap.wavelength:g}"
        write_png(sweep_dir / f"wl_{name}.png", np.asarray(cap.frame).astype(np.uint16))
        diff = {}
        if float(cap.exposure_ms) != meta["exposure_ms"]:
            diff["exposure_ms"] = float(cap.exposure_ms)
        if [float(g) for g in cap.rgb_gain] != meta["rgb_gain"]:
            diff["rgb_gain"] = [float(g) for g in cap.rgb_gain]
        if diff:
            meta["captures"][name] = diff
    (sweep_dir / SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
