import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsirecon.datacube import Datacube, transpose_cube
from hsirecon.errors import ConfigError, DimensionError
from hsirecon.metrics import (
    band_error_map,
    band_mrae,
    evaluate,
    heatmap_lut,
    mrae,
    render_heatmap,
    rmse,
    spectral_trace,
    trace_csv,
)

from oracles import mrae_loop, rmse_loop


def _cube(arr, wl=None):
    arr = np.asarray(arr, dtype=np.float64)
    return Datacube(arr, wl if wl is not None else 400.0 + 10 * np.arange(arr.shape[2]), "WHL")


def test_identical_is_zero():
    c = _cube(np.random.default_rng(0).random((3, 4, 5)))
    assert mrae(c, c) == 0 and rmse(c, c) == 0


def test_constant_offset_closed_form():
    gt, p = _cube(np.full((2, 2, 3), 0.5)), _cube(np.full((2, 2, 3), 0.6))
    assert mrae(p, gt) == pytest.approx(0.2, abs=1e-12)
    assert rmse(p, gt) == pytest.approx(0.1, abs=1e-12)


def test_rmse_single_element():
    assert rmse(_cube([[[0.3]]]), _cube([[[0.7]]])) == pytest.approx(0.4, abs=1e-12)


def test_against_loop_oracles():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p, gt = rng.random((2, 3, 4)), rng.random((2, 3, 4))
        gt[0, 0, 0] = 0.0  # exercises the floor
        assert abs(mrae(p, gt, 1e-4) - mrae_loop(p, gt, 1e-4)) < 1e-9
        assert abs(rmse(p, gt) - rmse_loop(p, gt)) < 1e-9


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        mrae(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
    with pytest.raises(DimensionError):
        rmse(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))
    with pytest.raises(ConfigError):
        mrae(np.ones(3), np.ones(3), eps=0.0)


def test_mrae_is_asymmetric_rmse_symmetric():
    a, b = _cube(np.full((1, 1, 1), 0.2)), _cube(np.full((1, 1, 1), 0.4))
    assert mrae(a, b) != mrae(b, a)
    assert rmse(a, b) == rmse(b, a)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariant_under_joint_permutation(seed):
    rng = np.random.default_rng(seed)
    p, gt = rng.random((3, 4, 5)), rng.random((3, 4, 5)) + 0.01
    perms = [rng.permutation(n) for n in p.shape]
    pp = p[np.ix_(*perms)]
    gp = gt[np.ix_(*perms)]
    assert mrae(pp, gp) == pytest.approx(mrae(p, gt), rel=1e-12)
    assert rmse(pp, gp) == pytest.approx(rmse(p, gt), rel=1e-12)


def test_layout_is_irrelevant():
    rng = np.random.default_rng(2)
    p, gt = _cube(rng.random((3, 4, 5))), _cube(rng.random((3, 4, 5)) + 0.1)
    assert mrae(transpose_cube(p, "LHW"), gt) == mrae(p, gt)


def test_error_map_zero_and_single_pixel():
    gt = _cube(np.full((4, 3, 2), 0.5))
    err, img = band_error_map(gt, gt, 1)
    assert np.all(err == 0) and img.shape == (3, 4, 3) and img.dtype == np.uint8
    vals = gt.values.copy()
    vals[2, 1, 0] = 0.75
    err, _ = band_error_map(_cube(vals), gt, 0)
    assert np.count_nonzero(err) == 1 and err[1, 2] == pytest.approx(0.5)


def test_error_map_mean_matches_band_profile():
    rng = np.random.default_rng(3)
    p, gt = _cube(rng.random((5, 6, 4))), _cube(rng.random((5, 6, 4)))
    profile = band_mrae(p, gt)
    for b in range(4):
        assert abs(band_error_map(p, gt, b)[0].mean() - profile[b]) < 1e-9


def test_error_map_band_out_of_range():
    c = _cube(np.ones((2, 2, 3)))
    with pytest.raises(IndexError):
        band_error_map(c, c, 3)


def test_heatmap_ramp_is_fixed():
    lut = heatmap_lut()
    assert lut.shape == (256, 3)
    assert tuple(lut[0]) == (0, 0, 0) and tuple(lut[255]) == (255, 0, 0)
    img = render_heatmap(np.array([[0.0, 2.0]]), vmax=1.0)
    assert tuple(img[0, 0]) == (0, 0, 0) and tuple(img[0, 1]) == (255, 0, 0)


def test_spectral_trace():
    c = _cube(np.full((3, 2, 4), 0.25))
    tr = spectral_trace(c, 1, 1)
    assert len(tr) == 4 and all(v == 0.25 for _, v in tr)
    rng = np.random.default_rng(4)
    c = _cube(rng.random((7, 5, 6)))
    for _ in range(10):
        x, y = int(rng.integers(7)), int(rng.integers(5))
        assert [v for _, v in spectral_trace(c, x, y)] == [c.at(x, y, b) for b in range(6)]
    with pytest.raises(IndexError):
        spectral_trace(c, 7, 0)


def test_trace_csv_format():
    text = trace_csv([400.0, 410.0], {"pred": [0.5, 0.25], "gt": [0.5, 0.5]})
    assert text == "wavelength_nm,pred,gt\n400.0,0.5,0.5\n410.0,0.25,0.5\n"


def test_evaluate_aggregates_are_element_weighted():
    rng = np.random.default_rng(5)
    small = (_cube(rng.random((2, 2, 3))), _cube(rng.random((2, 2, 3)) + 0.1))
    big = (_cube(rng.random((4, 5, 3))), _cube(rng.random((4, 5, 3)) + 0.1))
    rep = evaluate([("a", *small), ("b", *big)])
    allp = np.concatenate([small[0].as_layout("LHW").ravel(), big[0].as_layout("LHW").ravel()])
    allg = np.concatenate([small[1].as_layout("LHW").ravel(), big[1].as_layout("LHW").ravel()])
    assert abs(rep.mrae - mrae_loop(allp, allg, 1e-4)) < 1e-9
    assert abs(rep.rmse - rmse_loop(allp, allg)) < 1e-9
    assert rep.n_elements == allp.size and len(rep.band_mrae) == 3
    assert abs(np.mean(rep.band_mrae) - rep.mrae) < 1e-12
    assert rep.to_csv().splitlines()[0] == "image,mrae,rmse"
    assert "MRAE" in rep.to_text()
