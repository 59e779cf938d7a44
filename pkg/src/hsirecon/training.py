"""Loss, optimizer, learning-rate schedule and the training loop.

The bit-count loss is not differentiable, so training minimizes the
surrogate ``alpha * log10(1 + (2**b - 1) * sum|p - gt|)``: per element,
``(2**b - 1) * |p - gt|`` is the difference of the b-bit codes, an upper
bound on the number of flipped bits. The exact count
(:func:`hamming_metric`) is logged next to every loss.

The optimizer is Adam with bias correction, decoupled weight decay,
gradient centralization on multi-dimensional (convolution) weights and a
lookahead wrapper that blends slow and fast weights every ``k`` steps.
Both extras can be switched off.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from hsirecon.datacube import Datacube
from hsirecon.errors import ConfigError, DimensionError, DivergenceError, StateError
from hsirecon.forward_model import TrainingPair
from hsirecon.metrics import DEFAULT_EPS, evaluate
from hsirecon.ptnet.layers import Module
from hsirecon.tensor import Tensor, no_grad, ops


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3
    lr_init: float = 6e-4
    epochs: int = 300
    restart_period: int = 50
    loss_alpha: float = 1.0
    loss_quant_bits: int = 8
    seed: int = 0
    gradient_centralization: bool = True
    lookahead: bool = True
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    mrae_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if not self.lr_init > 0:
            raise ConfigError(f"lr_init must be positive, got {self.lr_init}")
        if not 1 <= self.loss_quant_bits <= 16:
            raise ConfigError(f"loss_quant_bits must lie in [1, 16], got {self.loss_quant_bits}")
        if not self.loss_alpha > 0:
            raise ConfigError(f"loss_alpha must be positive, got {self.loss_alpha}")
        if self.epochs < 1 or self.restart_period < 1 or self.lookahead_k < 1:
            raise ConfigError("epochs, restart_period and lookahead_k must be positive")
        if not 0 < self.lookahead_alpha <= 1:
            raise ConfigError(f"lookahead_alpha must lie in (0, 1], got {self.lookahead_alpha}")
        if self.eps < 0 or self.weight_decay < 0:
            raise ConfigError("eps and weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown TrainConfig field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# ---------------------------------------------------------------- loss and metric

def _codes(v: np.ndarray, bits: int) -> np.ndarray:
    top = (1 << bits) - 1
    return np.round(np.clip(v, 0.0, 1.0) * top).astype(np.uint16)


def hamming_metric(p, gt, bits: int = 8) -> int:
    """Total number of differing bits between the b-bit codes of p and gt.

    Values are clipped to [0, 1] before quantization. Datacubes are compared
    band by band in [bands, H, W] order.
    """
    a = p.as_layout("LHW") if isinstance(p, Datacube) else np.asarray(p)
    b = gt.as_layout("LHW") if isinstance(gt, Datacube) else np.asarray(gt)
    if a.shape != b.shape:
        raise DimensionError(f"hamming_metric: shapes {a.shape} and {b.shape} differ")
    if not 1 <= bits <= 16:
        raise ConfigError(f"bits must lie in [1, 16], got {bits}")
    x = np.bitwise_xor(_codes(a, bits), _codes(b, bits))
    return int(np.unpackbits(x.view(np.uint8)).sum())


def training_loss(p: Tensor, gt: Tensor, alpha: float = 1.0, bits: int = 8) -> Tensor:
    if not alpha > 0:
        raise ConfigError(f"loss alpha must be positive, got {alpha}")
    dist = ops.sum(ops.abs(ops.sub(p, gt)))
    return ops.scale(ops.log10(ops.add_scalar(ops.scale(dist, float((1 << bits) - 1)), 1.0)), alpha)


def cosine_lr(t: float, lr_init: float) -> float:
    """Learning rate at position t in [0, 1] of a cosine cycle."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"cycle position must lie in [0, 1], got {t}")
    return lr_init * (1.0 + math.cos(math.pi * t)) / 2.0


def lr_at_step(step: int, steps_per_cycle: int, lr_init: float) -> float:
    """Schedule with restarts: every cycle starts again at lr_init."""
    return cosine_lr((step % steps_per_cycle) / steps_per_cycle, lr_init)


# ---------------------------------------------------------------- optimizer

@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    slow: dict[str, np.ndarray] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    best_mrae: float = math.inf
    best_epoch: int = -1
    best_snapshot: dict[str, np.ndarray] | None = None


def optimizer_step(state: TrainState, params: Sequence[tuple[str, Tensor]], lr: float, config: TrainConfig) -> None:
    """One update of every (name, parameter) pair from its ``.grad``."""
    for name, p in params:
        if p.grad is None:
            raise StateError(f"parameter {name} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params:
        w = p.data.astype(np.float64)
        if config.lookahead and name not in state.slow:
            state.slow[name] = w.copy()
        g = np.asarray(p.grad, dtype=np.float64)
        if config.gradient_centralization and g.ndim > 1:
            g = g - g.mean(axis=tuple(range(1, g.ndim)), keepdims=True)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        w = w - lr * config.weight_decay * w - lr * update
        if config.lookahead and t % config.lookahead_k == 0:
            slow = state.slow[name]
            slow += config.lookahead_alpha * (w - slow)
            w = slow.copy()
        p.data = w.astype(p.data.dtype)


# ---------------------------------------------------------------- loop

@dataclass
class TrainReport:
    history: list[dict]
    best_mrae: float
    best_epoch: int
    steps: int
    state: TrainState


def _batch(pairs: Sequence[TrainingPair], idx) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([pairs[i].rgb.chw() for i in idx])
    y = np.stack([pairs[i].cube.as_layout("LHW") for i in idx])
    return x, y


def _check_pairs(pairs: Sequence[TrainingPair], what: str) -> None:
    if not pairs:
        raise ConfigError(f"{what} set is empty")
    for i, pr in enumerate(pairs):
        if (pr.rgb.height, pr.rgb.width) != (pr.cube.height, pr.cube.width):
            raise DimensionError(f"{what} pair {i}: RGB and cube extents differ")


def snapshot(model: Module) -> dict[str, np.ndarray]:
    out = {n: p.data.copy() for n, p in model.named_parameters()}
    out.update({n: b.copy() for n, b in model.named_buffers()})
    return out


def restore(model: Module, snap: dict[str, np.ndarray]) -> None:
    for n, p in model.named_parameters():
        p.data = snap[n].copy()
    for n, b in model.named_buffers():
        b[...] = snap[n]


def predict(model: Module, rgb_chw: np.ndarray) -> np.ndarray:
    """Run ``model`` in eval mode on one [3, H, W] image; returns [bands, H, W]."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            return model(Tensor(rgb_chw[None])).data[0]
    finally:
        model.train(was_training)


def validate(model: Module, pairs: Sequence[TrainingPair], eps: float = DEFAULT_EPS):
    triples = []
    for i, pr in enumerate(pairs):
        pred = Datacube.from_lhw(predict(model, pr.rgb.chw()), pr.cube.wavelengths)
        triples.append((pr.source or f"val_{i}", pred, pr.cube))
    return evaluate(triples, eps)


def train(
    model: Module,
    pairs: Sequence[TrainingPair],
    val_pairs: Sequence[TrainingPair],
    config: TrainConfig,
    log_path=None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainReport:
    """Train ``model`` in place; the best-by-validation-MRAE weights are kept in the report.

    Mini-batches must hold equally sized pairs. Each epoch visits every
    training pair once in a seeded random order.
    """
    _check_pairs(pairs, "training")
    _check_pairs(val_pairs, "validation")
    state = TrainState(rng=np.random.default_rng(config.seed))
    steps_per_epoch = math.ceil(len(pairs) / config.batch_size)
    cycle = config.restart_period * steps_per_epoch
    named = list(model.named_parameters())
    history = []
    log = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            model.train()
            order = state.rng.permutation(len(pairs))
            epoch_lr = lr_at_step(state.step, cycle, config.lr_init)
            losses, hams = [], []
            for start in range(0, len(order), config.batch_size):
                x, y = _batch(pairs, order[start:start + config.batch_size])
                lr = lr_at_step(state.step, cycle, config.lr_init)
                model.zero_grad()
                out = model(Tensor(x))
                loss = training_loss(out, Tensor(y), config.loss_alpha, config.loss_quant_bits)
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(state.step, value)
                loss.backward()
                optimizer_step(state, named, lr, config)
                losses.append(value)
                hams.append(hamming_metric(out.data, y, config.loss_quant_bits))
            state.epoch = epoch + 1
            report = validate(model, val_pairs, config.mrae_eps)
            if report.mrae < state.best_mrae:
                state.best_mrae, state.best_epoch = report.mrae, epoch
                state.best_snapshot = snapshot(model)
            row = {
                "epoch": epoch, "step": state.step, "lr": epoch_lr,
                "loss": float(np.mean(losses)), "hamming": float(np.mean(hams)),
                "val_mrae": report.mrae, "val_rmse": report.rmse,
            }
            history.append(row)
            if log:
                log.write(json.dumps(row) + "\n")
            if on_epoch:
                on_epoch(row)
    finally:
        if log:
            log.close()
    return TrainReport(history, state.best_mrae, state.best_epoch, state.step, state)
