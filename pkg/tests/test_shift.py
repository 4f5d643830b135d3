import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftbench import predio
from shiftbench import shift as S


def bars(n=3):
    return predio.make_synthetic_bars(n, 4, seed=0, angle_jitter=1.0, arc=300)


def test_rotation_quarter_turns_are_exact():
    img = np.random.default_rng(0).random((6, 6))
    np.testing.assert_array_equal(S.rotate_image(img, 90), np.rot90(img))
    np.testing.assert_array_equal(S.rotate_image(img, 360), img)
    np.testing.assert_array_equal(S.rotate_image(S.rotate_image(img, 90), -90), img)


def _direction(img):
    c = (img.shape[0] - 1) / 2.0
    rows, cols = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    x, y = cols - c, c - rows
    return math.degrees(math.atan2((img * y).sum(), (img * x).sum()))


def test_rotation_is_counter_clockwise():
    ray = predio.bar_template(16, 0.0)
    for angle in (30.0, 100.0, -45.0):
        assert _direction(S.rotate_image(ray, angle)) == pytest.approx(angle, abs=1.0)


def test_translation_wraps():
    img = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(S.translate_cyclic(img, 1)[:, 0], img[:, 3])
    np.testing.assert_array_equal(S.translate_cyclic(img, 4), img)
    with pytest.raises(S.ShiftError):
        S.translate_cyclic(img, 0.5)


def test_blur_preserves_mean_and_zero_is_identity():
    img = np.random.default_rng(1).random((16, 16))
    for sigma in (0.5, 1.0, 2.0):
        assert S.gaussian_blur(img, sigma).mean() == pytest.approx(img.mean(), abs=1e-12)
    np.testing.assert_array_equal(S.gaussian_blur(img, 0.0), img)
    assert len(S.gaussian_kernel(1.0)) == 7
    with pytest.raises(S.ShiftError):
        S.gaussian_blur(img, -1)


def test_categorical_examples():
    rows = np.array([[0.5, 1.0, 2.0], [1.5, 0.0, 4.0]])
    np.testing.assert_array_equal(S.randomize_categorical(rows, 0.0, (3, 5), seed=1), rows)
    full = S.randomize_categorical(rows, 1.0, (3, 5), seed=1)
    np.testing.assert_array_equal(full[:, 0], rows[:, 0])
    assert (full[:, 1] >= 3).all() and (full[:, 2] >= 5).all()


def test_categorical_replaced_fraction_band():
    n = 10_000
    rows = np.zeros((n, 2))
    out = S.randomize_categorical(rows, 0.75, (10,), seed=0)
    frac = float(np.mean(out[:, 1] >= 10))
    assert abs(frac - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / n)


def test_categorical_cells_are_reproducible_individually():
    rows = np.zeros((50, 3))
    a = S.randomize_categorical(rows, 0.5, (4, 4, 4), seed=11)
    b = S.randomize_categorical(rows[:20], 0.5, (4, 4, 4), seed=11)
    np.testing.assert_array_equal(a[:20], b)


def test_series_shape_and_labels():
    data = bars()
    spec = S.ShiftSpec("rotate", range(0, 181, 15))
    series = S.apply_shift_series(data, spec, seed=3)
    assert len(series) == 13
    for ds, level in zip(series, spec.levels):
        assert ds.n == data.n and np.array_equal(ds.labels, data.labels)
        assert ds.shift_level == level and ds.shift_type == "rotate"
    assert series[0].same_as(data)


def test_kind_mismatch():
    tab = predio.make_synthetic_tabular(10, seed=0)
    with pytest.raises(S.ShiftError):
        S.apply_shift_series(tab, S.ShiftSpec("rotate", [0, 15]))
    with pytest.raises(S.ShiftError):
        S.apply_shift_series(bars(), S.ShiftSpec("categorical_randomize", [0.5]))


def test_spec_validation():
    with pytest.raises(S.ShiftError):
        S.ShiftSpec("shear", [1])
    with pytest.raises(S.ShiftError):
        S.ShiftSpec("rotate", [30, 15])
    with pytest.raises(S.ShiftError):
        S.ShiftSpec("categorical_randomize", [0.5, 1.5])
    with pytest.raises(S.ShiftError):
        S.ShiftSpec("rotate", [])


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["rotate", "translate", "blur", "pixel_noise"]), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_shifts_deterministic_and_in_range(kind, level, seed):
    data = bars(2)
    value = {"rotate": 20.0 * level, "translate": float(level), "blur": 0.4 * level, "pixel_noise": 0.1 * level}[kind]
    a = S.apply_shift(data, kind, value, seed=seed)
    b = S.apply_shift(data, kind, value, seed=seed)
    assert a.same_as(b)
    assert a.features.min() >= 0.0 and a.features.max() <= 1.0 + 1e-12
