import warnings
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylex.images import RawImage
from stylex.phantoms import generate_phantom
from stylex.pipelines import (DegenerateWindowWarning, LapConfig, StyleParams, apply_lap, apply_surrogate,
                              apply_window, build_pyramid, corner_styles, downsample, even_grid, lap_prewindow,
                              load_styled, reconstruct, save_styled, sweep_params, sweep_styles, sweep_values,
                              upsample, _down_matrix, _up_matrix)


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom(11, (64, 64))


def band_energy(x, bands):
    pyr = build_pyramid(x, 4)
    return sum(float((pyr.bands[k] ** 2).sum()) for k in bands)


# pyramid --------------------------------------------------------------------

@pytest.mark.parametrize("n", [16, 17, 31, 64, 128])
def test_down_up_is_right_inverse_and_keeps_constants(n):
    d, u = _down_matrix(n), _up_matrix(n)
    np.testing.assert_allclose(d @ u, np.eye((n + 1) // 2), atol=1e-10)
    np.testing.assert_allclose(u @ np.ones((n + 1) // 2), np.ones(n), atol=1e-10)
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-12)


def test_constant_image_has_empty_bands():
    pyr = build_pyramid(np.full((64, 64), 123.0), 4)
    for band in pyr.bands:
        assert np.abs(band).max() < 1e-9
    np.testing.assert_allclose(pyr.residual, 123.0, atol=1e-9)


def test_impulse_reconstructs_with_two_levels():
    x = np.zeros((32, 32))
    x[16, 16] = 1.0
    np.testing.assert_allclose(reconstruct(build_pyramid(x, 2)), x, atol=1e-5)


def test_random_image_reconstructs():
    x = np.random.default_rng(0).random((64, 64))
    pyr = build_pyramid(x, 4)
    assert pyr.levels == 4 and pyr.residual.shape == (4, 4)
    assert np.abs(reconstruct(pyr) - x).max() < 1e-4


@given(st.integers(16, 70), st.integers(16, 70), st.integers(1, 4))
@settings(max_examples=25, deadline=None)
def test_reconstruction_any_shape(h, w, levels):
    x = np.random.default_rng(h * 100 + w).normal(size=(h, w))
    assert np.abs(reconstruct(build_pyramid(x, levels)) - x).max() < 1e-8


def test_pyramid_rejects_small_image():
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((8, 8)), 4)


def test_upsample_shape_check():
    with pytest.raises(ValueError):
        upsample(np.zeros((3, 3)), (8, 8))
    assert downsample(np.zeros((9, 8))).shape == (5, 4)


def test_gain_count_mismatch():
    with pytest.raises(ValueError):
        reconstruct(build_pyramid(np.zeros((32, 32)), 3), [1.0, 1.0])


# LAP ------------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        StyleParams(11, 5, 5)
    with pytest.raises(ValueError):
        StyleParams(5, -0.1, 5)
    with pytest.raises(ValueError):
        StyleParams(5, 5, float("nan"))


def test_neutral_gains_full_width_window(phantom):
    out = apply_lap(phantom, StyleParams(10, 5, 5))
    rec = reconstruct(build_pyramid(phantom.pixels, 4))
    lo, hi = rec.min(), rec.max()
    width = hi - lo
    expected = np.clip((rec - (np.median(rec) - width / 2)) / width, 0, 1)
    np.testing.assert_allclose(out.pixels, expected, atol=1e-12)
    # ranking preserved wherever the window did not clip
    inside = (expected > 0) & (expected < 1)
    order = np.argsort(rec[inside])
    assert np.all(np.diff(out.pixels[inside][order]) >= -1e-12)


def test_zero_h_removes_fine_bands(phantom):
    pre = lap_prewindow(phantom, StyleParams(5, 5, 0))
    total = float((pre ** 2).sum())
    assert band_energy(pre, (0, 1)) < 1e-6 * total


def test_h_sweep_increases_band0_energy(phantom):
    energies = [band_energy(lap_prewindow(phantom, StyleParams(5, 5, h)), (0,)) for h in np.linspace(0, 10, 11)]
    assert np.all(np.diff(energies) > 0)


def test_l_scales_mid_bands(phantom):
    low = band_energy(lap_prewindow(phantom, StyleParams(5, 2, 5)), (2, 3))
    high = band_energy(lap_prewindow(phantom, StyleParams(5, 8, 5)), (2, 3))
    assert high / low == pytest.approx(16.0, rel=1e-6)


def test_wider_window_lowers_contrast(phantom):
    narrow = apply_lap(phantom, StyleParams(0, 5, 5)).pixels
    wide = apply_lap(phantom, StyleParams(10, 5, 5)).pixels
    assert narrow.std() > wide.std()
    assert (narrow == 0).mean() + (narrow == 1).mean() > (wide == 0).mean() + (wide == 1).mean()


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
@settings(max_examples=30, deadline=None)
def test_lap_output_in_unit_range(w, l, h):
    img = generate_phantom(3, (64, 64))
    out = apply_lap(img, StyleParams(w, l, h))
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
    assert out.style_id == StyleParams(w, l, h).style_id and out.content_id == img.content_id


def test_degenerate_window_warns():
    with pytest.warns(DegenerateWindowWarning):
        out = apply_lap(RawImage(np.full((32, 32), 5.0), 0), StyleParams())
    np.testing.assert_array_equal(out.pixels, 0.5)


def test_window_constants_recorded(phantom):
    out, consts = apply_window(np.linspace(0, 1, 101).reshape(1, -1), 5.0)
    assert consts["center"] == pytest.approx(0.5) and consts["width"] == pytest.approx(0.6)
    assert out.min() == 0.0 and out.max() == 1.0


def test_lap_config_levels(phantom):
    assert apply_lap(phantom, StyleParams(3, 7, 2), LapConfig(levels=3)).meta["levels"] == 3


# surrogate ------------------------------------------------------------------

def test_surrogate_deterministic(phantom):
    a, b = apply_surrogate(phantom, 5), apply_surrogate(phantom, 5)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_surrogate_seeds_are_distinct(phantom):
    outs = [apply_surrogate(phantom, s).pixels for s in range(32)]
    collisions = [(i, j) for i, j in combinations(range(32), 2) if np.abs(outs[i] - outs[j]).mean() <= 0.01]
    assert collisions == []


def test_surrogate_constant_image():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = apply_surrogate(RawImage(np.full((32, 32), 9.0), 0), 3)
    assert np.ptp(out.pixels) == 0.0


def test_surrogate_range():
    out = apply_surrogate(generate_phantom(4, (64, 64)), 17)
    assert out.pixels.min() == 0.0 and out.pixels.max() == 1.0
    assert out.style_id == "surrogate:seed=17"


# style sets -----------------------------------------------------------------

def test_sweep_ten_steps():
    np.testing.assert_allclose(sweep_values(10), [10 * i / 9 for i in range(10)])
    assert sweep_values(10)[1] == pytest.approx(10 / 9)


def test_sweep_two_steps():
    assert sweep_values(2) == [0.0, 10.0]
    with pytest.raises(ValueError):
        sweep_values(1)


def test_sweep_styles_groups(phantom):
    groups = sweep_styles([phantom, generate_phantom(12, (64, 64))], "l", 3, StyleParams(6, 6, 6))
    assert len(groups) == 3 and all(len(g) == 2 for g in groups)
    assert [g[0].meta["params"]["l"] for g in groups] == [0.0, 5.0, 10.0]
    assert all(g[0].meta["params"]["w"] == 6.0 for g in groups)
    with pytest.raises(ValueError):
        sweep_params("q", 3, StyleParams())


def test_corner_and_even_sets():
    corners = corner_styles()
    assert len(set(corners)) == 8
    assert all(getattr(s, a) in (0.0, 10.0) for s in corners for a in "wlh")
    grid = even_grid()
    assert len(grid) == 216 and set(corners) <= set(grid)
    assert all(getattr(s, a) % 2 == 0 for s in grid for a in "wlh")


def test_styled_png_roundtrip(tmp_path, phantom):
    img = apply_lap(phantom, StyleParams(2, 8, 4))
    path = save_styled(tmp_path / "a.png", img)
    back = load_styled(path)
    assert back.style_id == img.style_id and back.content_id == img.content_id
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 65535 + 1e-12
