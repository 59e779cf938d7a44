"""Parallel transposed network (PTNet).

Stage 1 expands the RGB input to ``base_channels``, projects it to an
``n_bands`` datacube D and downsamples D by ``downsample_factor``.

Stage 2 runs up to three independent branches over D_down, each seeing a
different axis as channels:

    spectral   channels = bands   spatial = (H, W)
    height     channels = H       spatial = (W, bands)
    width      channels = W       spatial = (bands, H)

Before transposition the axis that becomes the channel axis is resampled to
``transpose_grid`` so branch weights do not depend on the input size. Each
branch is 1x1 projection -> RA blocks -> 1x1 projection back.

Stage 3 un-transposes every branch output, resizes it to [bands, H, W],
concatenates along the band axis, applies batch norm and the output block,
and adds D back as a global residual.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from hsirecon.errors import ConfigError, DimensionError
from hsirecon.ptnet.layers import BatchNorm2d, Conv2d, Module, RABlock
from hsirecon.tensor import Tensor, ops

BRANCHES = ("spectral", "height", "width")

# permutation of [N, bands, h, w] that puts each branch's channel axis second
_TO_BRANCH = {"spectral": (0, 1, 2, 3), "height": (0, 2, 3, 1), "width": (0, 3, 1, 2)}


@dataclass(frozen=True)
class PtnetConfig:
    n_bands: int
    base_channels: int = 32
    downsample_factor: int = 2
    ra_blocks_per_branch: int = 1
    ra_inner_channels: int = 64
    eca_kernel: int = 3
    transpose_grid: int = 64
    branches: tuple[str, ...] = BRANCHES
    interpolation: str = "bilinear"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        for name in ("n_bands", "base_channels", "ra_blocks_per_branch", "ra_inner_channels", "transpose_grid"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError(f"eca_kernel must be a positive odd integer, got {self.eca_kernel}")
        if self.downsample_factor not in (1, 2, 4):
            raise ConfigError(f"downsample_factor must be 1, 2 or 4, got {self.downsample_factor}")
        if not self.branches or len(set(self.branches)) != len(self.branches) or any(
            b not in BRANCHES for b in self.branches
        ):
            raise ConfigError(f"branches must be a non-empty subset of {BRANCHES}, got {self.branches}")
        if self.interpolation != "bilinear":
            raise ConfigError("interpolation is fixed to 'bilinear'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = list(self.branches)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PtnetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown PtnetConfig field(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "branches" in d:
            d["branches"] = tuple(d["branches"])
        return cls(**d)

    @classmethod
    def tiny(cls, n_bands=4, **kw) -> "PtnetConfig":
        """Desk-scale configuration used by gradient checks and toy experiments."""
        base = dict(base_channels=4, ra_inner_channels=4, transpose_grid=4, downsample_factor=2)
        base.update(kw)
        return cls(n_bands=n_bands, **base)

    @classmethod
    def full_scale(cls, n_bands=31) -> "PtnetConfig":
        """Widths sized for 241x128 patches; the parameter count is reported, not matched."""
        return cls(n_bands=n_bands, base_channels=64, ra_inner_channels=128,
                   ra_blocks_per_branch=1, transpose_grid=64)


class Branch(Module):
    def __init__(self, native_channels, cfg: PtnetConfig, rng):
        super().__init__()
        inner = cfg.ra_inner_channels
        self.proj_in = Conv2d(native_channels, inner, 1, rng=rng)
        for i in range(cfg.ra_blocks_per_branch):
            setattr(self, f"ra{i}", RABlock(inner, cfg.eca_kernel, rng=rng))
        self.n_blocks = cfg.ra_blocks_per_branch
        self.proj_out = Conv2d(inner, native_channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.proj_in(x)
        for i in range(self.n_blocks):
            y = getattr(self, f"ra{i}")(y)
        return self.proj_out(y)


class PTNet(Module):
    def __init__(self, config: PtnetConfig):
        super().__init__()
        object.__setattr__(self, "config", config)
        rng = np.random.default_rng(config.seed)
        nb, base = config.n_bands, config.base_channels
        self.input_conv = Conv2d(3, base, 3, rng=rng)
        self.input_proj = Conv2d(base, nb, 3, rng=rng)
        self.downsample = Conv2d(nb, nb, 3, rng=rng)
        for name in config.branches:
            native = nb if name == "spectral" else config.transpose_grid
            setattr(self, f"branch_{name}", Branch(native, config, rng))
        k = len(config.branches)
        self.fusion_bn = BatchNorm2d(k * nb)
        self.output_conv = Conv2d(k * nb, base, 3, rng=rng)
        self.output_proj = Conv2d(base, nb, 3, rng=rng)

    def stage1(self, rgb: Tensor) -> Tensor:
        return self.input_proj(ops.relu(self.input_conv(rgb)))

    def _run_branch(self, name: str, d_down: Tensor) -> Tensor:
        g = self.config.transpose_grid
        _, _, h, w = d_down.shape
        x = d_down
        if name == "height" and h != g:
            x = ops.bilinear_resize(x, g, w)
        elif name == "width" and w != g:
            x = ops.bilinear_resize(x, h, g)
        perm = _TO_BRANCH[name]
        y = getattr(self, f"branch_{name}")(ops.permute(x, perm))
        return ops.permute(y, ops.inverse_permutation(perm))

    def forward(self, rgb: Tensor, trace: dict | None = None, ablate=()) -> Tensor:
        """Reconstruct [N, n_bands, H, W] from [N, 3, H, W].

        ``trace`` (if given) receives intermediate tensors; branches named in
        ``ablate`` have their output zeroed before fusion.
        """
        cfg = self.config
        if rgb.ndim != 4 or rgb.shape[1] != 3:
            raise DimensionError(f"PTNet expects [N, 3, H, W], got {rgb.shape}")
        n, _, h, w = rgb.shape
        f = cfg.downsample_factor
        if h % f or w % f:
            raise ConfigError(f"input {h}x{w} is not divisible by downsample factor {f}")
        d = self.stage1(rgb)
        d_down = ops.subsample(self.downsample(d), f)
        outs = []
        for name in cfg.branches:
            y = ops.bilinear_resize(self._run_branch(name, d_down), h, w)
            if name in ablate:
                y = ops.scale(y, 0.0)
            outs.append(y)
        fused = ops.concat(outs, axis=1)
        y = self.output_proj(ops.relu(self.output_conv(self.fusion_bn(fused))))
        out = ops.add(y, d)
        if trace is not None:
            trace.update(stage1=d, downsampled=d_down, concat=fused, branches=dict(zip(cfg.branches, outs)))
        return out


def count_parameters(model: Module) -> int:
    return int(sum(p.size for _, p in model.named_parameters()))


def parameter_shapes(model: Module) -> dict[str, tuple[int, ...]]:
    return {name: tuple(p.shape) for name, p in model.named_parameters()}
