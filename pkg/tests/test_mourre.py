import numpy as np
import pytest

from hexscatter.lattice import H_sparse, LatticeBox, PotentialSpec, realize_potential
from hexscatter.mourre import (
    ConjugateOperator, LevelSpacingError, build_conjugate, c11_integrand_scan, commutator_field,
    commutator_H0prime_A, dyadic_bump, eigen_count, gradient_check, interior_mass, kato_smooth_check,
    lap_scan, level_spacing, mourre_constant, projected_commutator_bound, smooth_probe,
)
from hexscatter.symbols import Bands, TorusGrid, build_kappa, build_symbol_grid

MOURRE_C = 0.12650510204081603  # frozen from the N=1026 / N=3072 refinement


def test_conjugate_is_symmetric(bands, rng):
    A = ConjugateOperator(LatticeBox(12, "periodic"), bands)
    assert A.symmetry_defect(rng) <= 1e-11


def test_build_conjugate_from_symbol_grid(window, bands):
    sg = build_symbol_grid(TorusGrid(24), window, bands.kappa)
    assert build_conjugate(sg).box == LatticeBox(12, "periodic")
    with pytest.raises(ValueError):
        build_conjugate(bands)


def test_two_route_commutator(bands, rng):
    box = LatticeBox(64, "periodic")
    chk = commutator_H0prime_A(smooth_probe(box, rng), box, bands)
    assert chk.passed and chk.error <= 1e-9


def test_two_route_rejects_zero_padded(bands, rng):
    box = LatticeBox(8, "zero-padded")
    with pytest.raises(ValueError):
        commutator_H0prime_A(box.random_state(rng), box, bands)


def test_gradient_matches_finite_differences(bands, rng):
    assert gradient_check(bands, rng, n=500) <= 1e-6


def test_commutator_field(bands, window):
    grid = TorusGrid(96)
    f = commutator_field(bands, grid)
    assert f.nonnegative and f.band_symmetry_defect() == 0
    assert f.plus[grid.index_of(0.0, 0.0)] <= 1e-24
    assert f.min_on_window(window) > 0


def test_mourre_constant_positive_and_refined(window, bands):
    r = mourre_constant(window, bands, 1026)
    assert r.c > 0
    assert abs(r.c - MOURRE_C) / MOURRE_C <= 1e-6
    assert r.c <= r.grid_min + 1e-12


def test_mourre_constant_independent_of_gap(window):
    cs = [mourre_constant(window, Bands(build_kappa(window, g)), 1026).c for g in (0.3, 0.5)]
    assert abs(cs[0] - cs[1]) <= 1e-6 * cs[1]


def test_projected_commutator_bound(window, bands):
    assert projected_commutator_bound(bands, window, N=192) >= MOURRE_C - 0.05


def test_c11_scan_trivial_potential(bands):
    scan = c11_integrand_scan(bands, PotentialSpec(rho=0.7), "V_l", kmax=2)
    assert scan.norms == [0.0, 0.0, 0.0] and scan.passed
    with pytest.raises(ValueError):
        c11_integrand_scan(bands, PotentialSpec(rho=0.7), "V_x", kmax=1)


def test_dyadic_bump_support():
    t = np.array([0.4, 0.5, 1.0, 1.5, 2.0, 3.0])
    b = dyadic_bump(t)
    assert b[0] == b[1] == b[4] == b[5] == 0 and b[2] == 1.0 and 0 < b[3] <= 1


def test_interior_mass():
    box = LatticeBox(4, "zero-padded")
    v = np.stack([box.delta((0, 0)).ravel(), box.delta((-4, -4)).ravel()], axis=1)
    assert np.allclose(interior_mass(v, box), [1.0, 0.0])


def test_free_box_has_no_interior_eigenvalues(window):
    assert eigen_count(window, PotentialSpec(), (8, 12)).counts == [0, 0]


def test_cavity_positive_control(window):
    ec = eigen_count(window, PotentialSpec(wall=(3.0, 3.0, 10.0)), (12, 16, 20))
    assert ec.stable and ec.count >= 1


def test_level_spacing_floor(window):
    V = realize_potential(PotentialSpec(), LatticeBox(8, "zero-padded"))
    with pytest.raises(LevelSpacingError):
        lap_scan(V, [2.0], [1e-4])
    assert level_spacing(H_sparse(V.box, V), 2.0) > 0


def test_resolvent_pole_grows_like_inverse_eps(window):
    box = LatticeBox(12, "zero-padded")
    spec = PotentialSpec(wall=(3.0, 3.0, 10.0))
    lam = eigen_count(window, spec, (12,)).eigenvalues[0][0]
    scan = lap_scan(realize_potential(spec, box), [lam], [1e-1, 1e-2, 1e-3], honesty=0.0)
    slope = np.polyfit(np.log(scan.eps), np.log(scan.norms[0]), 1)[0]
    assert abs(slope + 1) <= 0.1


def test_lap_scan_rejects_small_weight():
    V = realize_potential(PotentialSpec(), LatticeBox(6, "zero-padded"))
    with pytest.raises(ValueError):
        lap_scan(V, [2.0], [0.1], s=0.5)


def test_kato_consistent_with_resolvent(window):
    V = realize_potential(PotentialSpec(), LatticeBox(10, "zero-padded"))
    eps = [0.2, 0.1]
    ref = lap_scan(V, [1.6, 2.0], eps)
    kato = kato_smooth_check(V, window, [1.6, 2.0], eps, lap=ref)
    assert kato.finite and kato.consistent
