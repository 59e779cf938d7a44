"""Command-line entry point: ``hsirecon <subcommand> ...``.

Every subcommand builds its outputs in a staging directory next to
``--out`` and moves them into place only on success, then writes
``manifest.json`` describing the resolved run. ``hsirecon replay
<manifest>`` re-executes a run from its manifest.

Configuration files are flat ``key = value`` text; keys are PtnetConfig or
TrainConfig field names (``seed`` sets both), ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from hsirecon import __version__
from hsirecon.calibration import Roi, calibrate, format_css, load_sweep, read_css, read_lamp, resample_css, sweep_grid
from hsirecon.datacube import Datacube, read_cube, write_cube
from hsirecon.errors import ConfigError, HsiError, UsageError
from hsirecon.forward_model import build_pair_set, read_pair_set, simulate_rgb, write_pair_set
from hsirecon.metrics import band_error_map, evaluate, spectral_trace, trace_csv
from hsirecon.pngio import read_png, write_png
from hsirecon.ptnet import PTNet, PtnetConfig, load_checkpoint, save_weights
from hsirecon.runtime import sequential as sequential_mode
from hsirecon.training import TrainConfig, predict, restore, train

MANIFEST = "manifest.json"


# ---------------------------------------------------------------- config files

def _coerce(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(s.strip() for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"config field {key}: cannot parse {text!r}") from exc
    return text


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Split a flat key=value file into (PtnetConfig overrides, TrainConfig overrides)."""
    net_defaults = {f.name: f.default for f in fields(PtnetConfig)}
    net_defaults["n_bands"] = 0
    train_defaults = {f.name: f.default for f in fields(TrainConfig)}
    net, trn = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        known = False
        if key in net_defaults:
            net[key] = _coerce(value, net_defaults[key], key)
            known = True
        if key in train_defaults:
            trn[key] = _coerce(value, train_defaults[key], key)
            known = True
        if not known:
            raise ConfigError(f"unknown config field {key!r} (line {lineno})")
    return net, trn


# ---------------------------------------------------------------- staging and manifests

@contextmanager
def staged_output(out: Path):
    """Yield a temp dir; on success its files are moved into ``out``, on error it is removed."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.staging-", dir=out.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if not out.exists():
        os.replace(stage, out)
        return
    for src in sorted(stage.rglob("*")):
        if src.is_file():
            dst = out / src.relative_to(stage)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
    shutil.rmtree(stage, ignore_errors=True)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def write_manifest(out: Path, command: str, args: dict, config: dict, outputs: list[str], extra=None) -> None:
    doc = {
        "tool": "hsirecon",
        "version": __version__,
        "subcommand": command,
        "args": args,
        "config": config,
        "seed": args.get("seed"),
        "sequential": args.get("sequential"),
        "outputs": sorted(outputs),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        doc.update(extra)
    tmp = out / (MANIFEST + ".part")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, out / MANIFEST)


def _files(stage: Path) -> list[str]:
    return [str(p.relative_to(stage)) for p in stage.rglob("*") if p.is_file()]


# ---------------------------------------------------------------- shared helpers

def _cube_files(cube_dir) -> list[Path]:
    d = Path(cube_dir)
    if not d.is_dir():
        raise UsageError(f"cube directory not found: {d}")
    files = sorted(d.glob("*.hsc"))
    if not files:
        raise UsageError(f"no .hsc cubes in {d}")
    return files


def _parse_ints(text: str | None) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()] if text else []


def _parse_pixels(text: str | None) -> list[tuple[int, int]]:
    out = []
    for item in (text or "").split(";"):
        if item.strip():
            x, y = item.split(",")
            out.append((int(x), int(y)))
    return out


def reconstruct_array(model: PTNet, rgb_hw3: np.ndarray) -> np.ndarray:
    """[H, W, 3] -> [bands, H, W]; reflect-pads to a multiple of the downsample factor, then crops."""
    f = model.config.downsample_factor
    h, w = rgb_hw3.shape[:2]
    ph, pw = (-h) % f, (-w) % f
    chw = np.asarray(rgb_hw3, dtype=np.float64).transpose(2, 0, 1)
    if ph or pw:
        chw = np.pad(chw, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return predict(model, chw)[:, :h, :w]


def _load_model(path) -> PTNet:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------- subcommands

def cmd_calibrate(a, stage: Path) -> dict:
    lamp_path = Path(a.lamp)
    lamp = read_lamp(lamp_path)
    captures = load_sweep(a.sweep)
    grid = sweep_grid(*a.grid) if a.grid else None
    result = calibrate(captures, lamp, Roi.parse(a.roi), grid, a.dark)
    _write_text(stage / "css.csv", format_css(result.css))
    rows = ["wavelength_nm,R_raw,G_raw,B_raw,lamp_power"]
    for wl, r, p in zip(result.css.wavelengths, result.raw_responses, result.lamp_power):
        rows.append(",".join([repr(float(wl)), *(repr(float(v)) for v in r), repr(float(p))]))
    _write_text(stage / "curves.csv", "\n".join(rows) + "\n")
    return {"saturated_nm": result.saturated}


def cmd_simulate(a, stage: Path) -> dict:
    css = read_css(a.css)
    files = _cube_files(a.cubes)
    cubes = []
    for f in files:
        cube = read_cube(f)
        try:
            simulate_rgb(cube, css)
        except HsiError as exc:
            raise type(exc)(f"{f.name}: {exc}") from exc
        cubes.append(cube)
    pairs = build_pair_set(cubes, css, a.patch[0], a.patch[1], a.quantize, names=[f.stem for f in files])
    write_pair_set(pairs, stage / "pairs")
    return {"pairs": len(pairs)}


def _train_configs(a, n_bands: int) -> tuple[PtnetConfig, TrainConfig]:
    if getattr(a, "resolved_config", None):
        return PtnetConfig.from_dict(a.resolved_config["ptnet"]), TrainConfig.from_dict(a.resolved_config["train"])
    net, trn = ({}, {}) if not a.config else parse_config_text(Path(a.config).read_text(encoding="utf-8"))
    if a.seed is not None:
        net["seed"] = trn["seed"] = a.seed
    if net.get("n_bands", n_bands) != n_bands:
        raise ConfigError(f"config n_bands {net['n_bands']} but pairs have {n_bands} bands")
    net["n_bands"] = n_bands
    return PtnetConfig.from_dict(net), TrainConfig.from_dict(trn)


def cmd_train(a, stage: Path) -> dict:
    pairs = read_pair_set(a.pairs)
    val = read_pair_set(a.val)
    if not pairs:
        raise ConfigError("training pair set is empty")
    net_cfg, train_cfg = _train_configs(a, pairs[0].cube.n_bands)
    a.resolved_config = {"ptnet": net_cfg.to_dict(), "train": train_cfg.to_dict()}
    model = PTNet(net_cfg)
    report = train(model, pairs, val, train_cfg, log_path=stage / "train_log.jsonl")
    save_weights(model, stage / "final.ptn")
    restore(model, report.state.best_snapshot)
    save_weights(model, stage / "best.ptn")
    return {"best_epoch": report.best_epoch, "best_val_mrae": report.best_mrae, "steps": report.steps}


def cmd_reconstruct(a, stage: Path) -> dict:
    model = _load_model(a.checkpoint)
    src = Path(a.input)
    if not src.is_file():
        raise UsageError(f"input not found: {src}")
    css = read_css(a.css) if a.css else None
    if src.suffix.lower() == ".png":
        raw = read_png(src)
        rgb = raw.astype(np.float64) / (65535.0 if raw.dtype == np.uint16 else 255.0)
        wavelengths = css.wavelengths if css is not None else np.arange(model.config.n_bands, dtype=np.float64)
    elif src.suffix.lower() == ".hsc":
        if css is None:
            raise UsageError("a cube input needs --css to simulate its RGB image")
        cube = read_cube(src)
        rgb = simulate_rgb(cube, css).values
        wavelengths = cube.wavelengths
    else:
        raise UsageError(f"unsupported input type {src.suffix!r}; expected .png or .hsc")
    if len(wavelengths) != model.config.n_bands:
        raise ConfigError(f"checkpoint reconstructs {model.config.n_bands} bands but {len(wavelengths)} wavelengths given")
    t0 = time.perf_counter()
    lhw = reconstruct_array(model, rgb)
    elapsed = time.perf_counter() - t0
    write_cube(Datacube.from_lhw(lhw.astype(np.float32), wavelengths), stage / f"{src.stem}.hsc")
    print(f"reconstructed {src.name} ({rgb.shape[1]}x{rgb.shape[0]}) in {elapsed:.3f} s")
    return {"reconstruction_seconds": elapsed}


def _pair_dirs(pred_dir, gt_dir) -> list[tuple[str, Path, Path]]:
    pred = {p.name: p for p in Path(pred_dir).glob("*.hsc")}
    gt = {p.name: p for p in Path(gt_dir).glob("*.hsc")}
    orphans = sorted(set(pred) ^ set(gt))
    if orphans:
        raise UsageError(f"unpaired files: {', '.join(orphans)}")
    if not pred:
        raise UsageError(f"no .hsc cubes in {pred_dir}")
    return [(Path(n).stem, pred[n], gt[n]) for n in sorted(pred)]


def _emit_maps(stage: Path, sub: str, name: str, pred: Datacube, gt: Datacube, bands, pixels, eps, vmax):
    for b in bands:
        _, img = band_error_map(pred, gt, b, eps, vmax)
        write_png(_mkparent(stage / sub / f"{name}_band{b:03d}.png"), img)
    for x, y in pixels:
        p, g = spectral_trace(pred, x, y), spectral_trace(gt, x, y)
        text = trace_csv([w for w, _ in g], {"predicted": [v for _, v in p], "ground_truth": [v for _, v in g]})
        _write_text(stage / "traces" / f"{name}_x{x}_y{y}.csv", text)


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_evaluate(a, stage: Path) -> dict:
    triples = [(n, read_cube(p), read_cube(g)) for n, p, g in _pair_dirs(a.pred, a.gt)]
    report = evaluate(triples, a.eps)
    _write_text(stage / "report.txt", report.to_text())
    _write_text(stage / "report.csv", report.to_csv())
    _write_text(stage / "bands.csv", report.band_csv())
    for name, p, g in triples:
        _emit_maps(stage, "heatmaps", name, p, g, _parse_ints(a.bands), _parse_pixels(a.pixels), a.eps, a.vmax)
    return {"mrae": report.mrae, "rmse": report.rmse}


def cmd_css_study(a, stage: Path) -> dict:
    if not a.css:
        raise UsageError("css-study needs at least one --css file")
    model = _load_model(a.checkpoint)
    files = _cube_files(a.cubes)
    cubes = [(f.stem, read_cube(f)) for f in files]
    rows = ["css,mrae,rmse"]
    text = ["css                              MRAE        RMSE"]
    results = {}
    for css_path in a.css:
        css = read_css(css_path)
        label = Path(css_path).stem
        triples = []
        for name, cube in cubes:
            use = resample_css(css, cube.wavelengths) if a.resample else css
            rgb = simulate_rgb(cube, use)
            pred = Datacube.from_lhw(reconstruct_array(model, rgb.values), cube.wavelengths)
            triples.append((name, pred, cube))
            _emit_maps(stage, f"heatmaps/{label}", name, pred, cube, _parse_ints(a.bands), [], a.eps, a.vmax)
        rep = evaluate(triples, a.eps)
        _write_text(stage / "reports" / f"{label}.txt", rep.to_text())
        rows.append(f"{label},{rep.mrae!r},{rep.rmse!r}")
        text.append(f"{label:<28} {rep.mrae:>10.6f}  {rep.rmse:>10.6f}")
        results[label] = {"mrae": rep.mrae, "rmse": rep.rmse}
    _write_text(stage / "study.csv", "\n".join(rows) + "\n")
    _write_text(stage / "study.txt", "\n".join(text) + "\n")
    return {"study": results}


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "css-study": cmd_css_study,
}

# arguments holding paths, resolved to absolute form in the manifest
_PATH_ARGS = {"sweep", "lamp", "cubes", "css", "pairs", "val", "config", "checkpoint", "input", "pred", "gt", "out"}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    common.add_argument("--sequential", action="store_true", help="single-threaded, bitwise reproducible")
    common.add_argument("--config", default=None, help="flat key = value configuration file")
    common.add_argument("--out", required=True, help="output directory")

    p = argparse.ArgumentParser(prog="hsirecon", description="RGB to hyperspectral reconstruction toolkit")
    p.add_argument("--version", action="version", version=f"hsirecon {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="camera spectral sensitivity from a monochromator sweep")
    c.add_argument("--sweep", required=True, help="directory of wl_<nm>.png frames plus sweep.json")
    c.add_argument("--lamp", required=True, help="lamp spectrum CSV (wavelength_nm,power)")
    c.add_argument("--roi", required=True, help="x,y,w,h region of the illuminated target")
    c.add_argument("--dark", type=float, default=0.0, help="dark level subtracted from every frame")
    c.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"), default=None,
                   help="expected wavelength grid (default: whatever the sweep holds)")

    s = sub.add_parser("simulate", parents=[common], help="build an RGB/HSI pair set from datacubes")
    s.add_argument("--cubes", required=True, help="directory of .hsc cubes")
    s.add_argument("--css", required=True, help="CSS CSV on the cubes' wavelength grid")
    s.add_argument("--patch", type=int, nargs=2, metavar=("W", "H"), required=True)
    s.add_argument("--quantize", action="store_true", help="round RGB to 8-bit steps")

    t = sub.add_parser("train", parents=[common], help="train PTNet on a pair set")
    t.add_argument("--pairs", required=True, help="training pair-set archive directory")
    t.add_argument("--val", required=True, help="validation pair-set archive directory")

    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct a datacube from RGB")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True, help=".png RGB image or .hsc cube (simulated through --css)")
    r.add_argument("--css", default=None, help="CSS CSV; also supplies output wavelengths for PNG input")

    e = sub.add_parser("evaluate", parents=[common], help="compare predicted and ground-truth cubes")
    e.add_argument("--pred", required=True, help="directory of predicted .hsc cubes")
    e.add_argument("--gt", required=True, help="directory of ground-truth .hsc cubes with matching names")
    e.add_argument("--bands", default=None, help="comma-separated band indices to render as heatmaps")
    e.add_argument("--pixels", default=None, help="'x,y;x,y' pixels whose spectra are written as CSV")
    e.add_argument("--eps", type=float, default=1e-4, help="MRAE floor on the ground truth")
    e.add_argument("--vmax", type=float, default=1.0, help="relative error mapped to the top of the colour ramp")

    k = sub.add_parser("css-study", parents=[common], help="reconstruction error under several CSS curves")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--cubes", required=True, help="directory of ground-truth .hsc cubes")
    k.add_argument("--css", nargs="*", default=[], help="one or more CSS CSV files")
    k.add_argument("--resample", action="store_true", help="resample each CSS onto the cube grid")
    k.add_argument("--bands", default=None, help="comma-separated band indices to render as heatmaps")
    k.add_argument("--eps", type=float, default=1e-4)
    k.add_argument("--vmax", type=float, default=1.0)

    y = sub.add_parser("replay", help="re-run a previous invocation from its manifest")
    y.add_argument("manifest")
    y.add_argument("--out", default=None, help="write to this directory instead of the recorded one")
    return p


def _resolved_args(a) -> dict:
    out = {}
    for key, value in vars(a).items():
        if key in ("command", "resolved_config"):
            continue
        if key in _PATH_ARGS and value is not None:
            value = [str(Path(v).resolve()) for v in value] if isinstance(value, list) else str(Path(value).resolve())
        out[key] = value
    return out


def run(a) -> dict:
    fn = COMMANDS[a.command]
    seq = sequential_mode() if a.sequential else _null()
    with seq:
        out = Path(a.out)
        with staged_output(out) as stage:
            info = fn(a, stage)
            outputs = _files(stage)
            config = getattr(a, "resolved_config", None) or {}
            write_manifest(stage, a.command, _resolved_args(a), config, outputs, {"result": info})
    return info


@contextmanager
def _null():
    yield


def replay(manifest_path, out=None) -> dict:
    doc = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    if doc.get("subcommand") not in COMMANDS:
        raise UsageError(f"{manifest_path}: not a hsirecon run manifest")
    ns = argparse.Namespace(command=doc["subcommand"], **doc["args"])
    ns.sequential = True
    if doc.get("config"):
        ns.resolved_config = doc["config"]
    if out is not None:
        ns.out = str(out)
    return run(ns)


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        if a.command == "replay":
            replay(a.manifest, a.out)
        else:
            run(a)
    except (HsiError, FileNotFoundError) as exc:
        print(f"hsirecon {a.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
