import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexscatter.lattice import LatticeBox, PotentialSpec, japanese_bracket, realize_potential
from hexscatter.propagators import PerturbedOperator
from hexscatter.scattering import (
    INCOMING, OUTGOING, BoundaryContaminationError, ConvergenceTrace, ModifierOperator, WindowMismatchError,
    b_operator_diagnostics, build_phase, cook_run, fastest_momentum, phase_correction, window_packet,
)

coord = st.floats(-50, 50, allow_nan=False)
speed = st.floats(0.2, 2.0)
angle = st.floats(0, 2 * np.pi)


@pytest.mark.parametrize("direction", [OUTGOING, INCOMING])
@given(x1=coord, x2=coord, s=speed, th=angle, rho=st.sampled_from([0.6, 0.7, 1.0, 1.3]))
@settings(max_examples=60, deadline=None)
def test_eikonal_transport(direction, x1, x2, s, th, rho):
    v1, v2 = s * np.cos(th), s * np.sin(th)
    h = 1e-4
    f = lambda a: phase_correction(x1 + a * v1, x2 + a * v2, v1, v2, 0.3, rho, direction)  # noqa: E731
    dpsi = (f(h) - f(-h)) / (2 * h)
    assert abs(dpsi + 0.3 * japanese_bracket(x1, x2, -rho)) <= 1e-6


def test_phase_vanishes_at_origin_and_without_potential():
    assert phase_correction(0.0, 0.0, 1.0, 0.5, 0.3, 0.7) == pytest.approx(0.0, abs=1e-14)
    assert np.all(phase_correction(np.arange(5.0), 1.0, 1.0, 0.0, 0.0, 0.7) == 0)
    with pytest.raises(ValueError):
        phase_correction(1.0, 1.0, 1.0, 0.0, 0.3, 0.7, "sideways")


def test_phase_table_decay(window, bands):
    tab = build_phase(PotentialSpec(rho=0.7, amp_long=0.3), window, bands)
    assert tab.passed and tab.decay_exponent <= -1.05
    assert tab.summary()["passed"]
    with pytest.raises(ValueError):
        build_phase(PotentialSpec(rho=0.4, amp_long=0.3), window, bands)


def test_fastest_momentum_on_shell(bands):
    xi = fastest_momentum(bands, 2.0)
    assert abs(bands.lam(*xi) - 2.0) <= 1e-12


@pytest.fixture(scope="module")
def packet_setup(bands, window):
    box = LatticeBox(32, "periodic")
    u = window_packet(box, bands, window, fastest_momentum(bands, 2.0), sigma=8.0)
    return box, u


def test_window_packet_normalized_and_in_window(packet_setup, bands, window):
    box, u = packet_setup
    J = ModifierOperator(PotentialSpec(rho=0.7, amp_long=0.3), window, bands)
    assert np.isclose(np.linalg.norm(u), 1.0)
    assert J.check_window(u, box) <= 1e-4


def test_modifier_rejects_out_of_window_state(packet_setup, bands, window, rng):
    box, _ = packet_setup
    J = ModifierOperator(PotentialSpec(rho=0.7, amp_long=0.3), window, bands)
    with pytest.raises(WindowMismatchError):
        J.apply(box.random_state(rng), box)


def test_trivial_modifier_is_identity(packet_setup, bands, window):
    box, u = packet_setup
    J = ModifierOperator(PotentialSpec(rho=0.7), window, bands)
    assert J.trivial and np.array_equal(J.apply(u, box), u)


def test_modifier_methods_agree(bands, window):
    # a component with compact momentum support around the fastest shell point
    box = LatticeBox(32, "periodic")
    k = 2 * np.pi * np.fft.fftfreq(box.side)
    xi0 = fastest_momentum(bands, 2.0)
    d1 = (k[:, None] - xi0[0] + np.pi) % (2 * np.pi) - np.pi
    d2 = (k[None, :] - xi0[1] + np.pi) % (2 * np.pi) - np.pi
    r2 = d1**2 + d2**2
    wh = np.where(r2 < 0.4**2, np.exp(-r2 / (2 * 0.15**2)), 0.0)
    w = np.fft.ifft2(wh)
    J = ModifierOperator(PotentialSpec(rho=0.7, amp_long=0.3), window, bands)
    dense = J.apply_tilde(w, box, 1, method="dense")
    sep = J.apply_tilde(w, box, 1, method="separable")
    assert np.linalg.norm(dense - sep) <= 1e-5 * np.linalg.norm(w)
    assert np.linalg.norm(dense - w) > 1e-3 * np.linalg.norm(w)


def test_free_cook_run_is_trivial(bands, window):
    box = LatticeBox(64, "zero-padded")
    u = window_packet(box, bands, window, fastest_momentum(bands, 2.0), sigma=8.0)
    H0 = PerturbedOperator(realize_potential(PotentialSpec(), box))
    tr = cook_run(u, H0, H0, n_times=4, fd_every=2)
    assert max(tr.cauchy) <= 1e-12 and max(tr.cook_norms) == 0.0
    assert abs(tr.isometry[-1] - 1) <= 1e-12 and tr.finite


def test_boundary_contamination_aborts(bands, window):
    box = LatticeBox(16, "zero-padded")
    u = window_packet(box, bands, window, fastest_momentum(bands, 2.0), sigma=3.0)
    H0 = PerturbedOperator(realize_potential(PotentialSpec(), box))
    with pytest.raises(BoundaryContaminationError, match="edge"):
        cook_run(u, H0, H0, t0=8.0, n_times=6, fd_every=0, intertwine=False)


def test_trace_helpers():
    tr = ConvergenceTrace([1.0, 20.0, 30.0, 40.0], [1, 1, 1, 1], [0.3, 0.2, 0.1], [0.5, 0.4, 0.3, 0.2],
                          [1, 1, 1, 1], [np.nan] * 4, [0, 0, 0, 0])
    assert tr.decreasing_after(10.0) and tr.decreasing_after(10.0, "cauchy")
    assert tr.tail(2) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ConvergenceTrace([2.0, 1.0], [0, 0], [0], [0, 0], [1, 1], [0, 0], [0, 0])


def test_b_diagnostics_free(window, bands):
    rep = b_operator_diagnostics(window, PotentialSpec(rho=0.7), bands, ladder=(8, 16))
    assert rep.b2 == [0.0, 0.0]
    assert all(np.isfinite(rep.b1)) and rep.stable("b1")


@pytest.mark.parametrize("x1, x2, v1, v2, rho", [
    (3, 4, 1, 0.5, 0.7), (-10, 2, 0.3, -1.2, 0.8), (20, -7, -0.9, 0.1, 1.3), (5, 5, 1, 1, 1.0),
])
def test_phase_matches_quadrature(x1, x2, v1, v2, rho):
    from scipy.integrate import quad

    f = lambda s: 0.3 * (japanese_bracket(x1 + s * v1, x2 + s * v2, -rho)  # noqa: E731
                         - japanese_bracket(s * v1, s * v2, -rho))
    ref = quad(f, 0, np.inf, limit=500, epsabs=1e-13)[0]
    assert abs(phase_correction(x1, x2, v1, v2, 0.3, rho) - ref) <= 1e-10
