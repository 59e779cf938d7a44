import warnings

import numpy as np
import pytest

from hsirecon.calibration import (
    CssMatrix,
    LampSpectrum,
    Roi,
    SaturationWarning,
    SweepCapture,
    calibrate,
    compensate_and_assemble,
    extract_response,
    load_sweep,
    read_css,
    read_lamp,
    resample_css,
    save_sweep,
    sweep_grid,
    synthetic_sweep,
    validate_sweep,
    write_css,
    write_lamp,
)
from hsirecon.errors import (
    CalibrationError,
    DuplicateWavelengthError,
    ExposureDriftError,
    FormatError,
    GainError,
    MissingWavelengthError,
)


def _uniform(rgb, wl=500.0, shape=(4, 5), gain=(1, 1, 1), exposure=20.0, dtype=np.float64):
    frame = np.broadcast_to(np.asarray(rgb, dtype=dtype), shape + (3,)).copy()
    return SweepCapture(wl, frame, exposure, gain)


def _smooth_css(wl):
    cols = [np.exp(-0.5 * ((wl - mu) / 30.0) ** 2) + 0.01 for mu in (600, 540, 460)]
    return CssMatrix(wl, np.stack(cols, axis=1))


def _xenon_like(wl):
    return LampSpectrum(wl, 1.0 + 0.5 * np.sin(wl / 17.0) ** 2 + 0.002 * (wl - 400))


def test_reference_grid_has_251_points_and_passes():
    grid = sweep_grid(400, 650, 1)
    assert len(grid) == 251 and grid[0] == 400 and grid[-1] == 650
    validate_sweep([_uniform((1, 1, 1), wl=w, shape=(1, 1)) for w in grid], grid)


def test_gain_not_unity_rejected():
    grid = [500.0, 501.0]
    caps = [_uniform((1, 1, 1), 500.0), _uniform((1, 1, 1), 501.0, gain=(1, 1.5, 1))]
    with pytest.raises(GainError) as err:
        validate_sweep(caps, grid)
    assert err.value.wavelengths == [501.0]


def test_missing_wavelength_listed():
    grid = sweep_grid(440, 460, 10)
    caps = [_uniform((1, 1, 1), w) for w in (440.0, 460.0)]
    with pytest.raises(MissingWavelengthError, match="450") as err:
        validate_sweep(caps, grid)
    assert err.value.wavelengths == [450.0]


def test_duplicate_and_drift():
    with pytest.raises(DuplicateWavelengthError):
        validate_sweep([_uniform((1, 1, 1), 500.0)] * 2, [500.0])
    caps = [_uniform((1, 1, 1), 500.0), _uniform((1, 1, 1), 501.0, exposure=25.0)]
    with pytest.raises(ExposureDriftError, match="501"):
        validate_sweep(caps, [500.0, 501.0])


def test_extract_response_uniform_and_dark():
    cap = _uniform((10, 20, 30))
    assert extract_response(cap, Roi(0, 0, 5, 4)) == (10, 20, 30)
    assert extract_response(cap, Roi(1, 1, 2, 2), dark_level=5) == (5, 15, 25)


def test_extract_response_random_matches_mean():
    rng = np.random.default_rng(0)
    frame = rng.uniform(0, 1000, (12, 9, 3))
    roi = Roi(2, 3, 5, 6)
    got = extract_response(SweepCapture(500.0, frame, 20.0), roi, dark_level=100.0)
    for c in range(3):
        total = 0.0
        for y in range(3, 9):
            for x in range(2, 7):
                total += max(frame[y, x, c] - 100.0, 0.0)
        assert abs(got[c] - total / 30) < 1e-9


def test_extract_response_bounds():
    with pytest.raises(IndexError):
        extract_response(_uniform((1, 1, 1)), Roi(3, 0, 4, 1))


def test_saturation_flagged():
    cap = _uniform((255, 10, 10), dtype=np.uint8)
    with pytest.warns(SaturationWarning):
        extract_response(cap, Roi(0, 0, 2, 2))
    grid = [500.0, 501.0]
    caps = [cap, _uniform((100, 10, 10), 501.0, dtype=np.uint8)]
    res = calibrate(caps, LampSpectrum([400.0, 700.0], [1.0, 1.0]), Roi(0, 0, 2, 2), grid)
    assert res.saturated == [500.0]


def test_flat_lamp_gives_normalized_responses():
    wl = np.array([500.0, 510.0, 520.0])
    resp = np.array([[1.0, 2.0, 4.0], [2.0, 8.0, 1.0], [0.5, 0.5, 0.5]])
    css = compensate_and_assemble(wl, resp, LampSpectrum(wl, np.ones(3)))
    np.testing.assert_allclose(css.sensitivity, resp / 8.0)
    assert css.sensitivity.max() == 1


def test_equal_responses_follow_inverse_lamp():
    wl = np.array([500.0, 510.0, 520.0])
    power = np.array([1.0, 2.0, 4.0])
    css = compensate_and_assemble(wl, np.full((3, 3), 7.0), LampSpectrum(wl, power))
    np.testing.assert_allclose(css.sensitivity[:, 0], 1 / power)


def test_lamp_interpolation_and_coverage():
    lamp = LampSpectrum([400.0, 500.0], [1.0, 3.0])
    assert lamp.power_at(450.0)[0] == 2.0
    with pytest.raises(CalibrationError, match="650"):
        lamp.power_at([450.0, 650.0])
    with pytest.raises(CalibrationError, match="410"):
        compensate_and_assemble([410.0], [[1, 1, 1]], LampSpectrum([400.0, 420.0], [1.0, -1.0]))


def test_closed_loop_on_reference_grid():
    grid = sweep_grid()
    truth = _smooth_css(grid)
    lamp = _xenon_like(grid)
    caps = synthetic_sweep(truth, lamp, scale=1234.5)
    res = calibrate(caps, lamp, Roi(0, 0, 4, 4), grid)
    expect = truth.sensitivity / truth.sensitivity.max()
    assert np.max(np.abs(res.css.sensitivity - expect) / expect) < 1e-6


def test_scale_equivariance_and_lamp_invariance():
    grid = sweep_grid(400, 450, 5)
    truth = _smooth_css(grid)
    lamp_a = _xenon_like(grid)
    lamp_b = LampSpectrum(grid, np.linspace(0.2, 5.0, len(grid)))
    roi = Roi(0, 0, 2, 2)
    a = calibrate(synthetic_sweep(truth, lamp_a), lamp_a, roi, grid).css.sensitivity
    a10 = calibrate(synthetic_sweep(truth, lamp_a, scale=10.0), lamp_a, roi, grid).css.sensitivity
    b = calibrate(synthetic_sweep(truth, lamp_b), lamp_b, roi, grid).css.sensitivity
    np.testing.assert_allclose(a10, a, rtol=1e-12)
    np.testing.assert_allclose(b, a, rtol=1e-12)


def test_per_pixel_map():
    grid = [500.0, 510.0]
    truth = CssMatrix(grid, [[1.0, 0.5, 0.2], [0.3, 0.9, 0.4]])
    lamp = LampSpectrum(grid, [2.0, 1.0])
    res = calibrate(synthetic_sweep(truth, lamp), lamp, Roi(0, 0, 3, 2), grid, per_pixel=True)
    assert res.pixel_css.shape == (2, 2, 3, 3)
    np.testing.assert_allclose(res.pixel_css[:, 1, 2, :], res.css.sensitivity)


def test_css_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    css = CssMatrix(np.arange(400.0, 410.0), rng.random((10, 3)))
    write_css(css, tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_bytes()
    assert text.startswith(b"wavelength_nm,R,G,B\n") and b"\r" not in text
    back = read_css(tmp_path / "c.csv")
    np.testing.assert_allclose(back.sensitivity, css.sensitivity, atol=1e-9)
    np.testing.assert_array_equal(back.wavelengths, css.wavelengths)


def test_css_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("wavelength_nm,R,G,B\n500,-0.1,0.2,0.3\n")
    with pytest.raises(FormatError, match="negative"):
        read_css(p)
    p.write_text("wavelength_nm,R,G,B\n")
    with pytest.raises(FormatError, match="no rows"):
        read_css(p)
    p.write_text("wavelength_nm,R,G,B\n510,1,1,1\n500,1,1,1\n")
    with pytest.raises(FormatError, match="increasing"):
        read_css(p)


def test_lamp_csv(tmp_path):
    lamp = LampSpectrum([400.0, 500.0], [0.5, 1.5])
    write_lamp(lamp, tmp_path / "lamp.csv")
    back = read_lamp(tmp_path / "lamp.csv")
    np.testing.assert_array_equal(back.relative_power, lamp.relative_power)
    with pytest.raises(FileNotFoundError, match="lamp spectrum not found"):
        read_lamp(tmp_path / "nope.csv")


def test_resample_css():
    css = CssMatrix([400.0, 500.0], [[0.0, 1.0, 0.5], [1.0, 0.0, 0.5]])
    r = resample_css(css, [400.0, 450.0, 500.0])
    np.testing.assert_allclose(r.sensitivity[1], [0.5, 0.5, 0.5])
    with pytest.raises(CalibrationError):
        resample_css(css, [390.0])


def test_sweep_directory_round_trip(tmp_path):
    grid = sweep_grid(500, 504, 1)
    caps = [_uniform((100 + i, 200, 300 - i), w, shape=(3, 3)) for i, w in enumerate(grid)]
    caps[2] = SweepCapture(caps[2].wavelength, caps[2].frame, 20.0, (2.0, 1.0, 1.0))
    save_sweep(caps, tmp_path / "sweep")
    loaded = load_sweep(tmp_path / "sweep")
    assert [c.wavelength for c in loaded] == list(grid)
    assert loaded[0].frame.dtype == np.uint16
    np.testing.assert_array_equal(loaded[1].frame, caps[1].frame)
    assert loaded[2].rgb_gain == (2.0, 1.0, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(GainError):
            validate_sweep(loaded, grid)
