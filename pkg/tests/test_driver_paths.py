"""Tests for Brownian sampling, square-root interpolation and oscillation."""

import json
import math

import numpy as np
import pytest

from engine.driver_paths import (
    DriverKind,
    analytic_driver,
    osc,
    osc_ratio,
    sample_brownian,
    scale_driver,
    sqrt_driver,
    sqrt_interpolate,
)
from engine.errors import InvalidArgumentError, MeshMismatchError
from utils.csv_io import read_csv


def test_same_seed_reproduces_path():
    a = sample_brownian(42, 1024, 1.0)
    b = sample_brownian(42, 1024, 1.0)
    np.testing.assert_array_equal(a.increments, b.increments)
    np.testing.assert_array_equal(a.values, b.values)


def test_brownian_starts_at_zero():
    b = sample_brownian(7, 100, 2.0)
    assert b.values[0] == 0.0
    assert b.times[-1] == pytest.approx(2.0)


def test_increment_variance():
    n = 2 ** 16
    b = sample_brownian(42, n, 1.0)
    assert np.var(b.increments) == pytest.approx(1.0 / n, rel=0.05)


@pytest.mark.parametrize("n,T", [(0, 1.0), (10, 0.0), (10, -1.0)])
def test_sample_brownian_rejects_bad_arguments(n, T):
    with pytest.raises(InvalidArgumentError):
        sample_brownian(1, n, T)


def test_scale_driver_zero_kappa():
    d = scale_driver(sample_brownian(3, 256), 0.0)
    assert np.all(d.values == 0.0)
    assert d.kind is DriverKind.RAW_BROWNIAN


def test_scale_driver_coupling_ratio():
    b = sample_brownian(5, 512)
    d1 = scale_driver(b, 1.0)
    d4 = scale_driver(b, 4.0)
    np.testing.assert_array_equal(d4.values, 2.0 * d1.values)
    assert d4.kappa == 4.0 and d4.seed == 5


def test_coupled_pair_sup_difference():
    b = sample_brownian(42, 1024)
    k1, k2 = 2.0, 2.0 + 2.0 ** -8
    gap = np.max(np.abs(scale_driver(b, k2).values - scale_driver(b, k1).values))
    expected = abs(math.sqrt(k1) - math.sqrt(k2)) * np.max(np.abs(b.values))
    assert gap == pytest.approx(expected, rel=1e-9)


def test_argmax_is_kappa_invariant():
    b = sample_brownian(11, 300)
    assert np.argmax(np.abs(scale_driver(b, 0.5).values)) == np.argmax(np.abs(scale_driver(b, 2.5).values))


def test_scale_driver_rejects_negative_kappa():
    with pytest.raises(InvalidArgumentError):
        scale_driver(sample_brownian(1, 8), -0.1)


def test_driver_arrays_are_read_only():
    d = scale_driver(sample_brownian(1, 8), 1.0)
    with pytest.raises(ValueError):
        d.values[0] = 1.0


def test_sqrt_driver_is_fixed_point():
    d = analytic_driver(lambda t: 1.5 * np.sqrt(t), 1024)
    out = sqrt_interpolate(d, 1)
    np.testing.assert_allclose(out.values, d.values, atol=1e-12)
    assert out.kind is DriverKind.SQRT_INTERPOLATED


def test_constant_driver_stays_constant():
    d = analytic_driver(lambda t: np.full_like(t, 0.7), 64)
    out = sqrt_interpolate(d, 8)
    np.testing.assert_allclose(out.values, 0.7)


def test_linear_driver_quarter_point():
    d = analytic_driver(lambda t: t, 1024)
    out = sqrt_interpolate(d, 2)
    assert out.values[256] == pytest.approx(math.sqrt(2) * 0.5 * 0.5, abs=1e-12)
    assert out.value_at(0.3) == pytest.approx(math.sqrt(2) * 0.5 * math.sqrt(0.3), abs=1e-12)


def test_interpolation_matches_knots():
    d = scale_driver(sample_brownian(42, 1024), 2.0)
    out = sqrt_interpolate(d, 16)
    np.testing.assert_array_equal(out.values[::64], d.values[::64])
    np.testing.assert_array_equal(out.knot_values(), d.values[::64])


def test_interpolation_is_idempotent():
    d = scale_driver(sample_brownian(9, 512), 1.3)
    once = sqrt_interpolate(d, 32)
    twice = sqrt_interpolate(once, 32)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)


def test_interpolation_mesh_mismatch():
    d = scale_driver(sample_brownian(1, 1024), 1.0)
    with pytest.raises(MeshMismatchError):
        sqrt_interpolate(d, 3)


def test_sqrt_driver_value_at_is_exact():
    d = sqrt_driver(3.0, n=16)
    assert d.value_at(0.0123) == pytest.approx(3.0 * math.sqrt(0.0123), abs=1e-14)


def test_osc_linear_driver():
    d = analytic_driver(lambda t: t, 1000)
    assert osc(d, 0.1) == pytest.approx(0.1, abs=1e-12)


def test_osc_constant_driver():
    d = analytic_driver(lambda t: np.full_like(t, 2.0), 100)
    assert osc(d, 0.05) == 0.0
    assert osc(d, 1.0) == 0.0


def test_osc_monotone_and_subadditive():
    d = scale_driver(sample_brownian(42, 4096), 1.0)
    deltas = [2.0 ** -k for k in range(10, 0, -1)]
    values = [osc(d, delta) for delta in deltas]
    assert all(a <= b for a, b in zip(values, values[1:]))
    for d1, d2 in [(2.0 ** -7, 2.0 ** -6), (2.0 ** -5, 2.0 ** -5), (2.0 ** -4, 2.0 ** -2)]:
        assert osc(d, d1 + d2) <= osc(d, d1) + osc(d, d2) + 1e-12


def test_osc_rejects_nonpositive_delta():
    d = analytic_driver(lambda t: t, 10)
    with pytest.raises(InvalidArgumentError):
        osc(d, 0.0)


def test_osc_ratio_is_order_one_for_brownian():
    d = scale_driver(sample_brownian(42, 2 ** 14), 1.0)
    ratio = osc_ratio(d, 2.0 ** -8)
    assert 0.1 < ratio < 5.0


def test_driver_save(tmp_path):
    d = sqrt_interpolate(scale_driver(sample_brownian(42, 64), 2.0), 8)
    d.save(tmp_path / "driver.csv", tmp_path / "driver.json")
    header, rows = read_csv(tmp_path / "driver.csv")
    assert header == ["t", "value"]
    assert len(rows) == 65
    meta = json.loads((tmp_path / "driver.json").read_text())
    assert meta == {"seed": 42, "kappa": 2.0, "n": 64, "T": 1.0, "kind": "sqrt-interpolated", "coarse_n": 8}
