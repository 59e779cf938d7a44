import numpy as np
import pytest

from hsirecon.errors import CheckpointError, ConfigError, DimensionError, FormatError
from hsirecon.ptnet import (
    Conv2d,
    Module,
    PTNet,
    PtnetConfig,
    RABlock,
    count_parameters,
    load_checkpoint,
    load_weights,
    parameter_shapes,
    save_weights,
)
from hsirecon.tensor import Tensor, no_grad, ops, precision

from oracles import central_diff


def _rgb(n=1, h=16, w=16, seed=0):
    return Tensor(np.random.default_rng(seed).random((n, 3, h, w)))


def _zero(module):
    for _, p in module.named_parameters():
        p.data[...] = 0


# ---------------------------------------------------------------- RA block

def test_ra_block_zero_branch_is_identity():
    block = RABlock(4, 3)
    _zero(block)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 5, 5)))
    np.testing.assert_array_equal(block(x).data, x.data)
    assert np.all(block.attention.gate(x).data == 0.5)


def test_attention_weights_in_open_unit_interval():
    block = RABlock(8, 3, rng=np.random.default_rng(2))
    for scale in (1e-3, 1.0, 30.0):
        x = Tensor(scale * np.random.default_rng(3).standard_normal((2, 8, 4, 4)))
        with precision(np.float64):
            g = block.attention.gate(Tensor(x.data.astype(np.float64))).data
        assert np.all((g > 0) & (g < 1))


@pytest.mark.parametrize("c", [4, 8])
@pytest.mark.parametrize("hw", [6, 10])
def test_ra_block_shape_sweep(c, hw):
    block = RABlock(c, 3, rng=np.random.default_rng(c + hw))
    x = Tensor(np.random.default_rng(0).standard_normal((1, c, hw, hw)))
    assert block(x).shape == x.shape


def test_ra_block_channel_mismatch():
    with pytest.raises(DimensionError):
        RABlock(4)(Tensor(np.zeros((1, 3, 4, 4))))


# ---------------------------------------------------------------- forward

def test_output_shape_contract():
    model = PTNet(PtnetConfig.tiny(8, transpose_grid=8))
    assert model(_rgb()).shape == (1, 8, 16, 16)


@pytest.mark.parametrize("h,w,f", [(8, 12, 2), (16, 8, 4), (5, 7, 1)])
def test_shape_contract_other_sizes(h, w, f):
    model = PTNet(PtnetConfig.tiny(5, downsample_factor=f, transpose_grid=3))
    assert model(_rgb(2, h, w)).shape == (2, 5, h, w)


def test_indivisible_extent_rejected():
    with pytest.raises(ConfigError, match="divisible"):
        PTNet(PtnetConfig.tiny(4))(_rgb(1, 9, 8))


def test_config_validation():
    with pytest.raises(ConfigError):
        PtnetConfig(n_bands=4, eca_kernel=4)
    with pytest.raises(ConfigError):
        PtnetConfig(n_bands=4, downsample_factor=3)
    with pytest.raises(ConfigError):
        PtnetConfig(n_bands=0)
    with pytest.raises(ConfigError):
        PtnetConfig(n_bands=4, branches=("diagonal",))


def test_global_residual_identity():
    model = PTNet(PtnetConfig.tiny(8, transpose_grid=8))
    _zero(model.output_proj)
    model.fusion_bn.beta.data[...] = 0
    trace = {}
    out = model(_rgb(), trace=trace)
    np.testing.assert_array_equal(out.data, trace["stage1"].data)


def test_branch_ablation_only_touches_its_slice():
    model = PTNet(PtnetConfig.tiny(4, transpose_grid=4))
    full, cut = {}, {}
    model(_rgb(), trace=full)
    model(_rgb(), trace=cut, ablate={"height"})
    a, b = full["concat"].data, cut["concat"].data
    nb = 4
    np.testing.assert_array_equal(a[:, :nb], b[:, :nb])
    np.testing.assert_array_equal(a[:, 2 * nb:], b[:, 2 * nb:])
    assert np.all(b[:, nb:2 * nb] == 0) and not np.all(a[:, nb:2 * nb] == 0)


def test_every_parameter_receives_gradient():
    model = PTNet(PtnetConfig.tiny(4, seed=3))
    rgb, gt = _rgb(2, 8, 8, 4), np.random.default_rng(5).random((2, 4, 8, 8))
    loss = ops.sum(ops.abs(ops.sub(model(rgb), Tensor(gt))))
    loss.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_full_model_gradient_check():
    """Tiny PTNet (4 bands, 8x8, base 4) against central differences at float64."""
    with precision(np.float64):
        model = PTNet(PtnetConfig.tiny(4, seed=11))
        rng = np.random.default_rng(12)
        rgb = Tensor(rng.random((2, 3, 8, 8)))
        weights = Tensor(rng.standard_normal((2, 4, 8, 8)))

        def scalar():
            with precision(np.float64), no_grad():
                return float(np.sum(model(rgb).data * weights.data))

        model.zero_grad()
        ops.sum(ops.mul(model(rgb), weights)).backward()
        worst = 0.0
        for name, p in model.named_parameters():
            numeric = central_diff(scalar, p.data, 1e-5)
            err = np.max(np.abs(p.grad - numeric) / np.maximum(1.0, np.abs(numeric)))
            worst = max(worst, err)
    assert worst < 1e-3


# ---------------------------------------------------------------- parameter counting

def test_count_single_conv():
    class One(Module):
        def __init__(self):
            super().__init__()
            self.conv = Conv2d(3, 8, 1)

    assert count_parameters(One()) == 32


def test_count_deterministic_and_matches_shape_dump():
    cfg = PtnetConfig.tiny(6, transpose_grid=5)
    a, b = PTNet(cfg), PTNet(cfg)
    assert count_parameters(a) == count_parameters(b)
    total = 0
    for shape in parameter_shapes(a).values():
        n = 1
        for s in shape:
            n *= s
        total += n
    assert count_parameters(a) == total


def test_parameter_names_are_stable_paths():
    names = list(parameter_shapes(PTNet(PtnetConfig.tiny(4))))
    assert names[0] == "input_conv.weight"
    assert "branch_height.ra0.attention.weight" in names
    assert "fusion_bn.gamma" in names


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = PtnetConfig.tiny(4, seed=7)
    model = PTNet(cfg)
    model(_rgb(1, 8, 8))  # moves batch-norm running stats
    save_weights(model, tmp_path / "m.ptn")
    back = load_weights(tmp_path / "m.ptn", cfg)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    for (_, b1), (_, b2) in zip(model.named_buffers(), back.named_buffers()):
        assert b1.tobytes() == b2.tobytes()
    assert load_checkpoint(tmp_path / "m.ptn").config == cfg


def test_checkpoint_config_mismatch(tmp_path):
    save_weights(PTNet(PtnetConfig.tiny(4)), tmp_path / "m.ptn")
    with pytest.raises(CheckpointError, match="n_bands") as err:
        load_weights(tmp_path / "m.ptn", PtnetConfig.tiny(5))
    assert err.value.fields == ["n_bands"]


def test_checkpoint_truncated(tmp_path):
    save_weights(PTNet(PtnetConfig.tiny(4)), tmp_path / "m.ptn")
    raw = (tmp_path / "m.ptn").read_bytes()
    (tmp_path / "t.ptn").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t.ptn")
    (tmp_path / "x.ptn").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(tmp_path / "x.ptn")


def test_full_scale_count_is_reported():
    n = count_parameters(PTNet(PtnetConfig.full_scale()))
    assert n > 0
