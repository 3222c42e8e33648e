import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexscatter.symbols import (
    DIRAC_POINTS, THRESHOLDS, EnergyWindow, TorusGrid, build_kappa, build_symbol_grid,
    eval_p_and_critical_points, h0_function, hprime_function, multiplier_projection, p_squared,
    smooth_step, window_function,
)

angles = st.floats(-np.pi, np.pi, allow_nan=False)


def test_torus_grid_index():
    g = TorusGrid(12)
    assert g.index_of(0.0, 0.0) == (6, 6)
    assert g.index_of(np.pi, -np.pi) == (0, 0)
    assert g.index_of(0.1, 0.0) is None
    with pytest.raises(ValueError):
        TorusGrid(7)


@pytest.mark.parametrize("ab", [(0.5, 1.5), (-0.5, 0.5), (1.2, 3.0), (2.0, 1.5)])
def test_window_rejects_thresholds(ab):
    with pytest.raises(ValueError):
        EnergyWindow(*ab)


def test_kappa_profile(window):
    k = build_kappa(window, 0.5)
    assert np.isclose(k.support, 0.36)
    assert k(0.0) == 0.5 and k(0.36) == 0.0
    E = np.linspace(0, 0.36, 1001)[:-1]
    assert np.all(E + k(E) ** 2 < 0.36)
    with pytest.raises(ValueError):
        build_kappa(window, 0.7)


def test_kappa_derivative(window):
    k = build_kappa(window, 0.3)
    E = np.linspace(0.01, 0.35, 50)
    h = 1e-6
    assert np.allclose(k.deriv(E), (k(E + h) - k(E - h)) / (2 * h), atol=1e-5)


def test_band_structure_on_grid():
    grid = TorusGrid(1026)
    p, rep = eval_p_and_critical_points(grid)
    assert abs(p.max() - 3) <= 1e-12
    assert abs(p[grid.index_of(0.0, 0.0)] - 3) <= 1e-12
    for d in DIRAC_POINTS:
        assert p[grid.index_of(*d)] <= 1e-12
    assert sorted(set(np.round(rep.critical_values, 12))) == [1.0, 3.0]
    assert rep.thresholds == list(THRESHOLDS)
    assert all(str(t) != "-0.0" for t in rep.thresholds)


def test_symbol_grid_residuals(window):
    sg = build_symbol_grid(TorusGrid(96), window, build_kappa(window, 0.5))
    assert sg.unitarity_residual() <= 1e-12
    assert sg.diagonalization_residual() <= 1e-12
    far = sg.p >= window.delta / 2
    assert np.abs(sg.lambda_plus[far] - sg.p[far]).max() <= 1e-12
    assert np.all(sg.lambda_plus >= 0)


def test_gap_at_dirac_points(bands):
    for d in DIRAC_POINTS:
        assert abs(bands.lam(*d) - 0.5) <= 1e-12


@given(angles, angles)
@settings(max_examples=200, deadline=None)
def test_uprime_diagonalizes(bands, x1, x2):
    U = bands.uprime(x1, x2)
    assert np.allclose(U @ U.conj().T, np.eye(2), atol=1e-12)
    D = U.conj().T @ bands.hprime(x1, x2) @ U
    lam = bands.lam(x1, x2)
    assert np.allclose(D, np.diag([lam, -lam]), atol=1e-12)


@given(angles, angles)
@settings(max_examples=200, deadline=None)
def test_p_bounded(x1, x2):
    assert -1e-15 <= p_squared(x1, x2) <= 9 + 1e-12


def test_smooth_step_and_window():
    t = np.linspace(-1, 2, 301)
    s = smooth_step(t)
    assert s[0] == 0 and s[-1] == 1 and np.all(np.diff(s) >= 0)
    chi = window_function(1.2, 2.8, 0.1)
    assert chi(2.0) == 1.0 and chi(1.2) == 0.0 and chi(2.8) == 0.0
    with pytest.raises(ValueError):
        window_function(1.0, 1.1, 0.1)


def test_projection_identity_in_window(bands, window):
    sg = build_symbol_grid(TorusGrid(192), window, bands.kappa)
    hp, h0 = multiplier_projection(sg, window_function(1.2, 2.8, 0.02))
    assert np.abs(hp - h0).max() <= 1e-10


def test_projection_identity_fails_in_gap(bands):
    xi1, xi2 = TorusGrid(192).mesh()
    chi = window_function(-0.3, 0.3, 0.1)
    d = h0_function(chi, xi1, xi2) - hprime_function(bands, chi, xi1, xi2)
    assert np.abs(d).max() > 0.5


def test_h0_function_is_projection(rng):
    xi1, xi2 = rng.uniform(-np.pi, np.pi, (2, 50))
    P = h0_function(lambda lam: (lam > 0).astype(float), xi1, xi2)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.allclose(np.trace(P, axis1=-2, axis2=-1), 1.0)
