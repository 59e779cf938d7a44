import numpy as np
import pytest

from hsirecon.calibration import CssMatrix, resample_css
from hsirecon.datacube import Datacube, extract_patches, transpose_cube
from hsirecon.errors import DegenerateInputError, GridError
from hsirecon.forward_model import (
    build_pair_set,
    project,
    read_pair_set,
    simulate_rgb,
    write_pair_set,
)

from oracles import rgb_dot


def _cube(w, h, n, seed=0):
    rng = np.random.default_rng(seed)
    return Datacube(rng.random((w, h, n)), 400.0 + 10 * np.arange(n), "WHL")


def _css(n, seed=1):
    rng = np.random.default_rng(seed)
    return CssMatrix(400.0 + 10 * np.arange(n), rng.uniform(0.05, 1.0, (n, 3)))


def test_single_band_collapse():
    c = Datacube(np.array([[[0.2], [0.4]], [[0.8], [0.1]]]), [500.0])
    rgb = simulate_rgb(c, CssMatrix([500.0], [[1.0, 1.0, 1.0]]))
    band = c.band(0)
    for ch in range(3):
        np.testing.assert_allclose(rgb.values[..., ch], band / band.max(), rtol=1e-6)


def test_constant_cube_gives_column_sums():
    css = _css(5)
    rgb = simulate_rgb(Datacube(np.ones((3, 2, 5)), css.wavelengths), css)
    sums = css.sensitivity.sum(axis=0)
    expected = sums / sums.max()
    assert np.all(rgb.values == rgb.values[0, 0])
    np.testing.assert_allclose(rgb.values[0, 0], expected, rtol=1e-6)


def test_projection_matches_dot_product_oracle():
    for seed in range(5):
        cube, css = _cube(3, 2, 5, seed), _css(5, seed + 10)
        np.testing.assert_allclose(project(cube, css), rgb_dot(cube.values, css.sensitivity), atol=1e-6)


def test_grid_mismatch_names_first_disagreement():
    cube = _cube(2, 2, 3)
    css = CssMatrix([400.0, 415.0, 420.0], np.ones((3, 3)))
    with pytest.raises(GridError, match="band 1"):
        simulate_rgb(cube, css)
    with pytest.raises(GridError, match="bands"):
        simulate_rgb(cube, _css(4))


def test_explicit_resampling_fixes_grid():
    cube = _cube(2, 2, 3)
    wide = CssMatrix([390.0, 430.0], [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    simulate_rgb(cube, resample_css(wide, cube.wavelengths))


def test_all_zero_is_degenerate():
    with pytest.raises(DegenerateInputError):
        simulate_rgb(Datacube(np.zeros((2, 2, 3)), [400.0, 410.0, 420.0]), _css(3))


def test_linearity_before_normalization():
    a, b, css = _cube(3, 3, 4, 1), _cube(3, 3, 4, 2), _css(4)
    mix = Datacube(2.0 * a.values + 0.5 * b.values, a.wavelengths)
    np.testing.assert_allclose(project(mix, css), 2.0 * project(a, css) + 0.5 * project(b, css), rtol=1e-12)


def test_column_selectivity():
    s = np.zeros((4, 3))
    s[:, 1] = [0.1, 0.5, 1.0, 0.2]
    rgb = simulate_rgb(_cube(3, 3, 4), CssMatrix(400.0 + 10 * np.arange(4), s))
    assert np.all(rgb.values[..., 0] == 0) and np.all(rgb.values[..., 2] == 0)


def test_layout_does_not_matter():
    cube, css = _cube(3, 4, 5), _css(5)
    ref = simulate_rgb(cube, css).values
    for lay in ("WLH", "LHW"):
        np.testing.assert_array_equal(simulate_rgb(transpose_cube(cube, lay), css).values, ref)


def test_quantize_flag():
    rgb = simulate_rgb(_cube(3, 3, 4), _css(4), quantize_8bit=True)
    codes = rgb.values.astype(np.float64) * 255
    np.testing.assert_allclose(codes, np.round(codes), atol=1e-3)


def test_full_frame_pair_count():
    n = 2
    cube = Datacube(np.random.default_rng(0).random((482, 512, n)).astype(np.float32), [500.0, 510.0])
    pairs = build_pair_set([cube], CssMatrix([500.0, 510.0], [[1, 0.5, 0.2], [0.3, 1, 0.1]]), 241, 128)
    assert len(pairs) == 8
    assert all(p.rgb.values.shape == (128, 241, 3) for p in pairs)


def test_full_image_patch_equals_simulation():
    cube, css = _cube(4, 6, 3), _css(3)
    (pair,) = build_pair_set([cube], css, 4, 6)
    np.testing.assert_array_equal(pair.rgb.values, simulate_rgb(cube, css).values)


def test_patches_aligned_with_shared_constant():
    cube, css = _cube(6, 4, 3, seed=7), _css(3)
    pairs = build_pair_set([cube], css, 3, 2)
    full = simulate_rgb(cube, css)
    for pair, hp in zip(pairs, extract_patches(cube, 3, 2)):
        assert pair.rgb.norm == full.norm
        np.testing.assert_array_equal(pair.cube.values, hp.values)
        own = simulate_rgb(hp, css, norm=full.norm)
        np.testing.assert_allclose(pair.rgb.values, own.values, rtol=1e-6)


def test_archive_round_trip_and_determinism(tmp_path):
    cube, css = _cube(4, 4, 3, 9), _css(3)
    pairs = build_pair_set([Datacube(cube.values.astype(np.float32), cube.wavelengths)], css, 2, 2, names=["scene"])
    write_pair_set(pairs, tmp_path / "a")
    write_pair_set(pairs, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    back = read_pair_set(tmp_path / "a")
    assert len(back) == 4
    for p, q in zip(pairs, back):
        np.testing.assert_array_equal(p.rgb.values, q.rgb.values)
        np.testing.assert_array_equal(p.cube.as_layout("LHW"), q.cube.as_layout("LHW"))
        assert p.rgb.norm == q.rgb.norm and q.source == "scene"
