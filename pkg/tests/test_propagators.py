import numpy as np
import pytest

from hexscatter.lattice import LatticeBox, PotentialSpec, realize_potential
from hexscatter.propagators import (
    EnclosureError, FreeOperator, HprimeLong, PerturbedOperator, apply_chi, conjugate_by_Uprime, dense_matrix,
    exp_coefficients, free_evolve, full_evolve, function_coefficients,
)
from hexscatter.symbols import window_function


@pytest.fixture
def small_H():
    box = LatticeBox(4, "zero-padded")
    return PerturbedOperator(realize_potential(PotentialSpec(rho=0.7, amp_long=0.3, amp_short=0.2), box))


def test_full_evolve_matches_dense(small_H, rng):
    box = small_H.box
    u = box.random_state(rng)
    u /= np.linalg.norm(u)
    w, Q = np.linalg.eigh(dense_matrix(small_H))
    for t in (0.5, 3.0, -7.0):
        exact = (Q @ (np.exp(-1j * t * w) * (Q.conj().T @ u.ravel()))).reshape(box.shape)
        assert np.linalg.norm(full_evolve(u, t, small_H, 1e-12) - exact) <= 1e-9


def test_full_evolve_group_property(small_H, rng):
    u = small_H.box.random_state(rng)
    a = full_evolve(full_evolve(u, 1.3, small_H, 1e-12), 2.1, small_H, 1e-12)
    b = full_evolve(u, 3.4, small_H, 1e-12)
    assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(u)
    assert np.isclose(np.linalg.norm(b), np.linalg.norm(u))


def test_enclosure_violation_detected(small_H):
    w, Q = np.linalg.eigh(dense_matrix(small_H))
    top = Q[:, -1].reshape(small_H.box.shape)
    small_H.radius = 0.5 * w[-1]
    with pytest.raises(EnclosureError):
        full_evolve(top, 2.0, small_H)


def test_exp_coefficients_decay():
    c = exp_coefficients(10.0, 3.0, 1e-12)
    assert np.abs(c[-1]) < 1e-11
    assert len(c) > 30


@pytest.mark.parametrize("which", ["H0", "H'0"])
def test_free_evolution_matches_chebyshev(which, bands, rng):
    box = LatticeBox(6, "periodic")
    op = FreeOperator(box, bands, which)
    u = box.random_state(rng)
    assert np.linalg.norm(free_evolve(u, 2.5, op) - full_evolve(u, 2.5, op, 1e-12)) <= 1e-9 * np.linalg.norm(u)


def test_free_operator_rejects_unknown(bands):
    with pytest.raises(ValueError):
        FreeOperator(LatticeBox(4), bands, "H1")


def test_uprime_is_unitary_on_box(bands, rng):
    box = LatticeBox(6, "periodic")
    u = box.random_state(rng)
    v = conjugate_by_Uprime(u, box, bands)
    assert np.isclose(np.linalg.norm(v), np.linalg.norm(u))
    assert np.allclose(conjugate_by_Uprime(v, box, bands, adjoint=True), u)


def test_hprime_long_is_symmetric(bands, rng):
    box = LatticeBox(6, "periodic")
    H = HprimeLong(realize_potential(PotentialSpec(amp_long=0.3), box), bands)
    u, v = box.random_state(rng), box.random_state(rng)
    assert abs(np.vdot(v, H.apply(u)) - np.vdot(H.apply(v), u)) <= 1e-10


def test_function_coefficients_accuracy():
    chi = window_function(1.2, 2.8, 0.3)
    c, err = function_coefficients(chi, 3.05, 1e-8)
    assert err <= 1e-8


def test_apply_chi_is_spectral_projection(small_H, rng):
    chi = window_function(1.2, 2.8, 0.3)
    u = small_H.box.random_state(rng)
    w, Q = np.linalg.eigh(dense_matrix(small_H))
    exact = (Q @ (chi(w) * (Q.conj().T @ u.ravel()))).reshape(u.shape)
    assert np.linalg.norm(apply_chi(u, chi, small_H) - exact) <= 1e-6 * np.linalg.norm(u)
