"""Tests for the kappa-continuity analysis: distances, bounds, fits and the experiment."""

import math
from dataclasses import replace

import numpy as np
import pytest

from engine.conformal_maps import MapChain, compose_chain, map_derivative
from engine.driver_paths import sample_brownian, scale_driver, sqrt_interpolate
from engine.errors import InvalidArgumentError, MeshMismatchError
from engine.kappa_analysis import (
    CONTINUITY_HEADER,
    check_kappa_regime,
    choose_mesh,
    continuity_experiment,
    driver_distance,
    estimate_beta,
    fit_derivative_exponent,
    hyperbolic_distance,
    hyperbolic_step_bound,
    lemma23_bound,
    lemma23_check,
    psi_phi_terms,
    rate_fit,
    refinement_study,
    theoretical_rate,
)


@pytest.fixture
def small(quick):
    return replace(quick, fine_resolution=1024, n_min=32, n_max=64)


@pytest.mark.parametrize("kappa", [0.0, -1.0, 8.0 / 3.0, 3.0])
def test_kappa_regime_rejected(kappa):
    with pytest.raises(InvalidArgumentError):
        check_kappa_regime(kappa)


def test_driver_distance_identical():
    d = scale_driver(sample_brownian(1, 256), 2.0)
    assert driver_distance(d, d).epsilon == 0.0


def test_driver_distance_split():
    b = sample_brownian(42, 1024)
    raw = scale_driver(b, 4.0)
    interp = sqrt_interpolate(scale_driver(b, 1.0), 16)
    dist = driver_distance(interp, raw)
    assert dist.split_bound is not None
    assert dist.epsilon <= dist.split_bound + 1e-12
    assert dist.epsilon >= np.max(np.abs(b.values[::64])) - 1e-12
    assert dist.kappa_part == pytest.approx(np.max(np.abs(b.values)))


def test_driver_distance_mesh_mismatch():
    with pytest.raises(MeshMismatchError):
        driver_distance(scale_driver(sample_brownian(1, 64), 1.0), scale_driver(sample_brownian(1, 128), 1.0))


def test_hyperbolic_distance_values():
    assert hyperbolic_distance(1j, 1j) == 0.0
    assert hyperbolic_distance(1j, 2j) == pytest.approx(math.log(2.0), abs=1e-14)
    assert hyperbolic_distance(0.3 + 1j, 2j) == pytest.approx(hyperbolic_distance(2j, 0.3 + 1j))


def test_hyperbolic_distance_matches_arccosh():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = complex(rng.normal(), rng.uniform(0.1, 2))
        w = complex(rng.normal(), rng.uniform(0.1, 2))
        expected = math.acosh(1 + abs(z - w) ** 2 / (2 * z.imag * w.imag))
        assert hyperbolic_distance(z, w) == pytest.approx(expected, rel=1e-9)


def test_hyperbolic_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b, c = (complex(rng.normal(), rng.uniform(0.05, 3)) for _ in range(3))
        assert hyperbolic_distance(a, c) <= hyperbolic_distance(a, b) + hyperbolic_distance(b, c) + 1e-12


def test_hyperbolic_distance_needs_interior_points():
    with pytest.raises(InvalidArgumentError):
        hyperbolic_distance(0.5, 1j)


def test_hyperbolic_step_bound_holds_for_a_chain():
    d = sqrt_interpolate(scale_driver(sample_brownian(4, 1024), 2.0), 32)
    chain = MapChain.from_driver(d)
    z, w = 0.3 + 0.2j, 0.31 + 0.21j
    gap = abs(complex(compose_chain(chain, z)) - complex(compose_chain(chain, w)))
    assert gap <= hyperbolic_step_bound(z, w, map_derivative(chain, z))


def test_lemma_bound_closed_forms():
    assert lemma23_bound(0.0, 1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(math.sqrt(5.0))
    assert lemma23_bound(0.0, 1.0, 0.5, 0.0, 2.0, 3.0) == 0.0


def test_lemma_bound_is_monotone():
    base = dict(eps=0.01, T=1.0, y=0.1, re_offset=0.02, deriv1=2.0, deriv2=3.0)
    ref = lemma23_bound(**base)
    for key in ("eps", "re_offset", "deriv1", "deriv2", "T"):
        bumped = dict(base)
        bumped[key] = base[key] * 2
        assert lemma23_bound(**bumped) >= ref


def test_lemma_bound_argument_checks():
    with pytest.raises(InvalidArgumentError):
        lemma23_bound(0.01, 1.0, 0.0, 0.0, 1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        lemma23_bound(-0.01, 1.0, 0.1, 0.0, 1.0, 1.0)


def coupled_drivers(seed, kappa1=2.0, kappa2=2.1, n=64, fine=1024):
    b = sample_brownian(seed, fine)
    return scale_driver(b, kappa1), sqrt_interpolate(scale_driver(b, kappa2), n)


@pytest.mark.parametrize("x1,x2,y,T", [(0.1, 0.05, 0.3, 1.0), (0.0, 0.0, 0.1, 0.5), (-0.2, -0.1, 0.5, 0.75)])
def test_lemma_check_holds(x1, x2, y, T):
    d1, d2 = coupled_drivers(42)
    check = lemma23_check(d1, d2, complex(x1, y), complex(x2, y), T)
    assert check.measured <= 1.05 * check.bound
    assert check.eps > 0


def test_lemma_check_needs_same_height():
    d1, d2 = coupled_drivers(1)
    with pytest.raises(InvalidArgumentError):
        lemma23_check(d1, d2, 0.1 + 0.2j, 0.1 + 0.3j, 1.0)


@pytest.mark.slow
def test_lemma_check_over_random_configurations():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        d1, d2 = coupled_drivers(int(rng.integers(0, 2 ** 31)), kappa2=float(rng.uniform(1.0, 2.5)))
        y = float(rng.uniform(0.05, 1.0))
        x1, x2 = rng.uniform(-0.1, 0.1, size=2)
        T = float(rng.uniform(0.1, 1.0))
        check = lemma23_check(d1, d2, complex(x1, y), complex(x2, y), T)
        assert check.measured <= 1.05 * check.bound, f"trial {trial}: {check}"


def test_psi_phi_regression_values():
    psi, phi = psi_phi_terms(2.0, 2.1, 256, 0.6)
    assert psi == pytest.approx(8.764, rel=1e-3)
    assert phi == pytest.approx(10.66, rel=1e-2)


def test_psi_phi_vanish_for_equal_kappa():
    assert psi_phi_terms(1.5, 1.5, 128, 0.3) == (0.0, 0.0)


def test_psi_phi_linear_in_gap():
    g = 0.01
    k1 = 2.0
    a = psi_phi_terms(k1, (math.sqrt(k1) + g) ** 2, 512, 0.5)
    b = psi_phi_terms(k1, (math.sqrt(k1) + g / 2) ** 2, 512, 0.5)
    assert b[0] == pytest.approx(a[0] / 2, rel=1e-9)
    assert b[1] == pytest.approx(a[1] / 2, rel=1e-9)


def test_estimate_beta_tiny_kappa():
    b = sample_brownian(42, 64)
    est = estimate_beta(b, [1e-10], np.linspace(0, 1, 11), [0.01, 0.05, 0.2, 1.0], n=1)
    assert est.beta == pytest.approx(0.0, abs=1e-3)
    assert est.c0 == pytest.approx(1.0, rel=1e-3)


def test_estimate_beta_argument_checks():
    b = sample_brownian(42, 64)
    with pytest.raises(InvalidArgumentError):
        estimate_beta(b, [1.0], [0.5], [0.1, 0.1], n=8)
    with pytest.raises(InvalidArgumentError):
        estimate_beta(b, [1.0], [0.5], [0.1, 2.0], n=8)
    with pytest.raises(InvalidArgumentError):
        estimate_beta(b, [3.0], [0.5], [0.1, 0.2], n=8)


def test_fit_derivative_exponent_power_law():
    ys = np.geomspace(1e-3, 1e-1, 6)
    est = fit_derivative_exponent(ys, 2.0 * ys ** -0.4)
    assert est.beta == pytest.approx(0.4, abs=1e-9)
    assert est.c0 == pytest.approx(2.0, rel=1e-9)


@pytest.mark.slow
def test_estimate_beta_brownian_in_unit_interval():
    b = sample_brownian(42, 2 ** 14)
    est = estimate_beta(b, np.linspace(0.5, 2.5, 5), np.linspace(0, 1, 65), np.geomspace(1e-3, 1e-1, 8), n=256)
    assert 0.0 < est.beta < 1.0


def test_theoretical_rate():
    assert theoretical_rate(0.0) == pytest.approx(0.1464, abs=1e-4)
    assert theoretical_rate(1.0) == 0.0


def test_rate_fit_power_law():
    ns = np.array([64, 128, 256, 512, 1024])
    fit = rate_fit(ns, ns ** -0.1, beta=0.0)
    assert fit.slope == pytest.approx(-0.1, abs=1e-9)
    assert fit.theoretical == pytest.approx(-theoretical_rate(0.0))
    assert fit.excluded == []


def test_rate_fit_excludes_zero_distances():
    ns = [32, 64, 128, 256, 512]
    dists = [0.0, 0.3, 0.2, 0.15, 0.1]
    fit = rate_fit(ns, dists)
    assert fit.excluded == [32]
    assert fit.ns.size == 4


def test_rate_fit_needs_four_points():
    with pytest.raises(InvalidArgumentError):
        rate_fit([64, 128, 256, 512], [0.1, 0.05, 0.0, 0.02])


def test_choose_mesh_values():
    assert choose_mesh(2.0 ** -4) == 64
    assert choose_mesh(0.0, n_max=4096) == 4096
    assert choose_mesh(0.9, n_min=32) == 32
    assert choose_mesh(1e-9, n_max=2 ** 14) == 2 ** 14


def test_choose_mesh_growth():
    wide = dict(n_min=1, n_max=2 ** 40)
    for gap in (0.1, 0.03, 0.007):
        n = choose_mesh(gap, **wide)
        assert choose_mesh(gap / 2, **wide) // n in (2, 4)
        assert choose_mesh(gap / 4, **wide) == 8 * n


def test_choose_mesh_error_term_vanishes():
    wide = dict(n_min=1, n_max=2 ** 40)
    values = []
    for j in range(6, 22, 2):
        gap = 2.0 ** -j
        n = choose_mesh(gap, **wide)
        values.append(gap * math.sqrt(n) * math.log(n))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_continuity_identical_kappa(small):
    b = sample_brownian(42, 1024)
    report = continuity_experiment(42, 2.0, [2.0], settings=small, brownian=b)
    row = report.rows[0]
    assert row.n_j == 64 and row.n_ref == 1024
    assert row.sup_dist == 0.0 and row.approx_sup_dist == 0.0
    assert row.psi == 0.0 and row.phi == 0.0
    assert len(report.table()[0]) == len(CONTINUITY_HEADER)


def test_continuity_is_symmetric(small):
    b = sample_brownian(7, 1024)
    a = continuity_experiment(7, 1.0, [1.2], schedule=[32], settings=small, brownian=b)
    c = continuity_experiment(7, 1.2, [1.0], schedule=[32], settings=small, brownian=b)
    assert a.sup_dists == c.sup_dists
    assert a.approx_sup_dists == c.approx_sup_dists


def test_continuity_failed_leg_is_reported(small):
    b = sample_brownian(3, 1024)
    report = continuity_experiment(3, 1.0, [1.1, 1.05], schedule=[48, 32], settings=small, brownian=b)
    assert report.rows[0].sup_dist is None
    assert "does not divide" in report.rows[0].error
    assert report.rows[1].sup_dist is not None and report.rows[1].error == ""


def test_continuity_workers_agree(small):
    b = sample_brownian(11, 1024)
    seq = [1.5, 1.25, 1.1]
    serial = continuity_experiment(11, 1.0, seq, settings=small, brownian=b)
    threaded = continuity_experiment(11, 1.0, seq, settings=small, brownian=b, workers=3)
    assert serial.sup_dists == threaded.sup_dists
    assert serial.n_schedule == threaded.n_schedule


def test_continuity_rejects_supercritical_kappa(small):
    with pytest.raises(InvalidArgumentError):
        continuity_experiment(1, 3.0, [2.0], settings=small)
    with pytest.raises(InvalidArgumentError):
        continuity_experiment(1, 2.0, [1.0, 1.5], schedule=[32], settings=small)


def test_continuity_rejects_empty_sequence(small):
    with pytest.raises(InvalidArgumentError, match="empty"):
        continuity_experiment(1, 2.0, [], settings=small)


def test_refinement_study_ladder():
    study = refinement_study(sample_brownian(5, 1024), 1.5, [8, 16, 32, 64])
    assert len(study.dists) == 4
    assert all(d > 0 for d in study.dists)
    assert study.fit is not None and study.fit.ns.size == 4


def count_increases(values):
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


@pytest.mark.slow
def test_refinement_ladder_decreases_at_seed_42():
    study = refinement_study(sample_brownian(42, 2 ** 16), 2.0, [64, 128, 256, 512])
    assert count_increases(study.dists) <= 1
    assert study.fit.slope < 0


@pytest.mark.slow
def test_rate_fit_on_brownian_ladder_reports_decay():
    study = refinement_study(sample_brownian(42, 2 ** 16), 2.0, [64, 128, 256, 512, 1024], beta=0.5)
    assert study.fit.slope <= 0
    # the theoretical exponent is reported next to the fit, never compared with it
    assert study.fit.theoretical == pytest.approx(-theoretical_rate(0.5))


@pytest.mark.slow
def test_estimate_beta_stable_when_y_grid_is_halved():
    b = sample_brownian(42, 2 ** 14)
    kappas = np.linspace(0.5, 2.5, 5)
    ts = np.linspace(0, 1, 65)
    ys = np.geomspace(1e-3, 1e-1, 9)
    full = estimate_beta(b, kappas, ts, ys, n=256)
    half = estimate_beta(b, kappas, ts, ys[::2], n=256)
    assert abs(full.beta - half.beta) <= 0.1


@pytest.mark.slow
def test_continuity_distances_shrink_along_geometric_sequence():
    seq = [2.0 + 2.0 ** -j for j in range(1, 9)]
    report = continuity_experiment(42, 2.0, seq)
    assert all(row.error == "" for row in report.rows)
    for dists in (report.sup_dists, report.approx_sup_dists):
        assert count_increases(dists) <= 1
        assert dists[-1] < 0.05
