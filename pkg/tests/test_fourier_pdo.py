import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexscatter.fourier import apply_multiplier, fft_axis, forward_F, inverse_F, torus_size
from hexscatter.lattice import LatticeBox, apply_H0, japanese_bracket
from hexscatter.pdo import (
    LatticeMultiplier, PdoSymbol, apply_op, assemble_weighted_commutator, convolution_kernel, kernel_sums,
    power_norm, schur_bound, telescoping_check, weighted_commutator_kernel,
)
from hexscatter.harness import pdo_test_symbol
from hexscatter.symbols import eval_alpha


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_fourier_roundtrip_and_plancherel(L, seed):
    box = LatticeBox(L, "periodic")
    u = box.random_state(np.random.default_rng(seed))
    f = forward_F(u, box)
    assert np.allclose(inverse_F(f, box), u)
    # (2 pi)^-1 normalization against an N-point grid of cell (2 pi / N)^2
    assert np.isclose(np.sum(np.abs(f) ** 2) * (2 * np.pi / box.side) ** 2, np.sum(np.abs(u) ** 2))


def test_forward_F_needs_periodic_box():
    box = LatticeBox(3, "zero-padded")
    with pytest.raises(ValueError):
        forward_F(box.zeros(), box)


@pytest.mark.parametrize("mode", ["periodic", "zero-padded"])
def test_H0_as_multiplier(mode, rng):
    box = LatticeBox(6, mode)
    M = torus_size(box)
    k = fft_axis(M)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    a = eval_alpha(k1, k2)
    sym = np.zeros((M, M, 2, 2), dtype=complex)
    sym[..., 0, 1] = np.conj(a)
    sym[..., 1, 0] = a
    u = box.random_state(rng)
    assert np.allclose(apply_multiplier(u, box, sym), apply_H0(u, box), atol=1e-12)


def test_multiplier_oracle(rng):
    a = PdoSymbol.multiplier(pdo_test_symbol)
    u = rng.standard_normal((16, 16)) + 0j
    xi = 2 * np.pi * np.fft.fftfreq(16)
    k1, k2 = np.meshgrid(xi, xi, indexing="ij")
    oracle = np.fft.ifft2(pdo_test_symbol(k1, k2) * np.fft.fft2(u))
    assert np.abs(apply_op(a, u) - oracle).max() <= 1e-10


def test_multiplication_symbol(rng):
    b = lambda x1, x2: 1.0 + 0.1 * x1  # noqa: E731
    u = rng.standard_normal((8, 8)) + 0j
    out = apply_op(PdoSymbol.multiplication(b), u)
    x = np.arange(8) - 4
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    assert np.allclose(out, b(x1, x2) * u)


def test_convolution_kernel_of_shift():
    K, reach = convolution_kernel(lambda k1, k2: np.exp(-1j * k1), 3, 32)
    c = np.zeros_like(K)
    c[reach + 1, reach] = 1.0
    assert np.allclose(K / (2 * np.pi) ** 2, c, atol=1e-12) or np.allclose(K, c, atol=1e-12)


def test_commutator_with_constant_vanishes():
    a = PdoSymbol.multiplier(pdo_test_symbol)
    r, c, e, _ = kernel_sums(lambda x1, x2: np.full(np.broadcast(x1, x2).shape, 2.0), a, 0.5, 0.5, 6)
    assert r == c == e == 0.0


def test_weights_must_balance():
    a = PdoSymbol.multiplier(pdo_test_symbol)
    b = LatticeMultiplier(lambda x1, x2: japanese_bracket(x1, x2, -0.7), 1.7)
    with pytest.raises(ValueError):
        weighted_commutator_kernel(b, a, 1.0, 1.0, (4,))


def test_schur_dominates_power_norm(rng):
    a = PdoSymbol.multiplier(pdo_test_symbol)
    T = assemble_weighted_commutator(lambda x1, x2: japanese_bracket(x1, x2, -0.7), a, 0.85, 0.85, 6)
    nrm = power_norm(lambda v: T @ v, lambda v: T.conj().T @ v, (T.shape[0],), rng, 1e-10)
    assert np.isclose(nrm, np.linalg.norm(T, 2), rtol=1e-6)
    assert schur_bound(T) >= nrm


def test_power_norm_zero_operator(rng):
    assert power_norm(lambda v: 0 * v, lambda v: 0 * v, (4,), rng) == 0.0


@given(st.floats(0.1, 1.7))
@settings(max_examples=10, deadline=None)
def test_telescoping_bound(rho):
    pairs = np.random.default_rng(0).integers(-20, 21, size=(40, 4))
    assert telescoping_check(lambda x1, x2: japanese_bracket(x1, x2, -rho), pairs) <= 1e-15
