"""Time evolution and functional calculus.

Free operators (``H0``, ``H'_0``) are Fourier multipliers and are exponentiated
exactly per momentum.  Perturbed operators (``H``, ``H'_l``) go through a
Chebyshev expansion that only needs matrix-vector products.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.special import jv

from .fourier import apply_multiplier, torus_size
from .lattice import LatticeBox, Potential, apply_H0
from .symbols import Bands, h0_function, hprime_function

log = logging.getLogger(__name__)

__all__ = [
    "EnclosureError",
    "FreeOperator",
    "PerturbedOperator",
    "HprimeLong",
    "ChebyshevSeries",
    "exp_coefficients",
    "function_coefficients",
    "free_evolve",
    "full_evolve",
    "apply_chi",
    "conjugate_by_Uprime",
    "dense_matrix",
]


class EnclosureError(RuntimeError):
    """Spectrum of the operator is not inside the assumed interval ``[-R, R]``."""


class _Operator:
    box: LatticeBox
    radius: float

    def apply(self, u: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, u):
        return self.apply(u)

    def rayleigh(self, u: np.ndarray) -> float:
        return float(np.vdot(u, self.apply(u)).real / np.vdot(u, u).real)


class FreeOperator(_Operator):
    """``H0`` (``which='H0'``) or the gap-opened ``H'_0`` (``which="H'0"``)."""

    def __init__(self, box: LatticeBox, bands: Bands, which: str = "H0"):
        if which not in ("H0", "H'0"):
            raise ValueError(f"which must be 'H0' or \"H'0\", got {which!r}")
        self.box, self.bands, self.which = box, bands, which
        self.M = torus_size(box)
        self.radius = 3.0 + 1e-9

    @cached_property
    def fields(self):
        return self.bands.fft_fields(self.M)

    @cached_property
    def symbol(self) -> np.ndarray:
        return self.fields.h0 if self.which == "H0" else self.fields.hprime

    def apply(self, u):
        if self.box.periodic and self.which == "H0":
            return apply_H0(u, self.box)
        return apply_multiplier(u, self.box, self.symbol)

    def function_symbol(self, f) -> np.ndarray:
        F = self.fields
        if self.which == "H0":
            return h0_function(f, F.xi1, F.xi2)
        return hprime_function(self.bands, f, F.xi1, F.xi2)

    def exp_symbol(self, t: float) -> np.ndarray:
        """``exp(-i t S(xi))`` using ``S(xi)^2 = e(xi)^2 I``."""
        S = self.symbol
        e = np.abs(S[..., 1, 0]) if self.which == "H0" else self.fields.lam
        c = np.cos(t * e)
        s = t * np.sinc(t * e / np.pi)  # sin(t e) / e, finite at e = 0
        out = -1j * s[..., None, None] * S
        out[..., 0, 0] += c
        out[..., 1, 1] += c
        return out


class PerturbedOperator(_Operator):
    """``H = H0 + V`` by the direct-space stencil."""

    def __init__(self, V: Potential, margin: float = 0.05):
        self.V = V
        self.box = V.box
        self.radius = 3.0 + V.sup + margin

    def apply(self, u):
        return apply_H0(u, self.box) + self.V.apply(u)

    @cached_property
    def matrix(self):
        from .lattice import H_sparse

        return H_sparse(self.box, self.V)


class HprimeLong(_Operator):
    """``H'_l = H'_0 + U' V_l U'^*`` with the scalar long-range part ``V_l``."""

    def __init__(self, V: Potential, bands: Bands, margin: float = 0.05):
        self.V, self.bands, self.box = V, bands, V.box
        self.free = FreeOperator(V.box, bands, "H'0")
        self.radius = 3.0 + float(np.abs(V.V_long).max()) + margin

    def apply(self, u):
        w = conjugate_by_Uprime(u, self.box, self.bands, adjoint=True)
        w = conjugate_by_Uprime(self.V.V_long * w, self.box, self.bands)
        return self.free.apply(u) + w


def conjugate_by_Uprime(u: np.ndarray, box: LatticeBox, bands: Bands, adjoint: bool = False) -> np.ndarray:
    """Apply ``U' = F^* U'(.) F`` or its adjoint."""
    U = bands.fft_fields(torus_size(box)).U
    if adjoint:
        U = np.conj(np.swapaxes(U, -1, -2))
    return apply_multiplier(u, box, U)


# ---------------------------------------------------------------- Chebyshev machinery


def exp_coefficients(t: float, radius: float, eps: float = 1e-9) -> np.ndarray:
    """Chebyshev coefficients of ``exp(-i t R x)`` on ``[-1, 1]`` truncated at ``eps``."""
    a = abs(t) * radius
    kmax = int(a + 30 + 10 * np.sqrt(a + 1))
    while True:
        k = np.arange(kmax + 1)
        J = jv(k, a)
        tail = np.cumsum(np.abs(J[::-1]))[::-1] * 2
        if tail[-1] < eps * 1e-3:
            break
        kmax *= 2
    K = int(np.argmax(tail < eps))  # first index whose tail is below eps
    c = 2.0 * (-1j * np.sign(t)) ** k[:K] * J[:K]
    c[0] = J[0]
    return c


def function_coefficients(f, radius: float, eps: float = 1e-8, max_degree: int = 1 << 16):
    """Chebyshev interpolant of ``f(R x)`` with uniform error below ``eps``.

    Returns ``(coeffs, error)`` where ``error`` is the measured sup error on a
    dense check grid.
    """
    n = 256
    xs = np.cos(np.linspace(0, np.pi, 20001))
    fx = f(radius * xs)
    while True:
        nodes = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        c = sfft.dct(f(radius * nodes), type=2) / n
        c[0] /= 2
        mags = np.abs(c)
        # cut where the remaining coefficient mass falls below eps/4
        tail = np.cumsum(mags[::-1])[::-1]
        K = int(np.argmax(tail < eps / 4)) if tail[-1] < eps / 4 else n
        if K < int(0.8 * n):
            c = c[:K]
            err = float(np.abs(np.polynomial.chebyshev.chebval(xs, c) - fx).max())
            if err <= eps or n >= max_degree:
                return c, err
        if n >= max_degree:
            err = float(np.abs(np.polynomial.chebyshev.chebval(xs, c) - fx).max())
            return c, err
        n *= 2


@dataclass
class ChebyshevSeries:
    """``sum_k c_k T_k(S / R)`` applied matrix-free."""

    coeffs: np.ndarray
    radius: float
    check_every: int = 32

    def __call__(self, op: _Operator, u: np.ndarray) -> np.ndarray:
        R = self.radius
        c = self.coeffs
        nrm = np.sqrt(np.vdot(u, u).real)
        t_prev = u
        out = c[0] * u
        if len(c) == 1:
            return out
        t_cur = op.apply(u) / R
        out = out + c[1] * t_cur
        for k in range(2, len(c)):
            t_next = 2.0 * op.apply(t_cur) / R - t_prev
            out += c[k] * t_next
            t_prev, t_cur = t_cur, t_next
            if k % self.check_every == 0:
                # |T_k(x)| <= 1 on [-1, 1]; growth means spectrum outside [-R, R]
                if np.sqrt(np.vdot(t_cur, t_cur).real) > 1.5 * nrm + 1e-300:
                    raise EnclosureError(
                        f"Chebyshev recurrence grew at degree {k}; spectrum exceeds [-{R:g}, {R:g}]"
                    )
        return out


def _check_enclosure(op: _Operator, u: np.ndarray) -> None:
    if np.vdot(u, u).real == 0:
        return
    q = op.rayleigh(u)
    if abs(q) > op.radius:
        raise EnclosureError(f"Rayleigh quotient {q:g} outside [-{op.radius:g}, {op.radius:g}]")


def free_evolve(u: np.ndarray, t: float, op: FreeOperator) -> np.ndarray:
    if u.shape != op.box.shape:
        raise ValueError(f"state shape {u.shape} does not match box {op.box.shape}")
    if t == 0:
        return u.copy()
    return apply_multiplier(u, op.box, op.exp_symbol(t))


def full_evolve(u: np.ndarray, t: float, op: _Operator, eps: float = 1e-9) -> np.ndarray:
    """``exp(-i t S) u`` by Chebyshev expansion to accuracy ``eps * |u|``."""
    if t == 0:
        return u.copy()
    _check_enclosure(op, u)
    series = ChebyshevSeries(exp_coefficients(t, op.radius, eps), op.radius)
    return series(op, u)


def apply_chi(u: np.ndarray, chi, op: _Operator, eps: float = 1e-8, series: ChebyshevSeries | None = None):
    """``chi(S) u`` by a Chebyshev interpolant of ``chi`` on ``[-R, R]``."""
    if series is None:
        coeffs, err = function_coefficients(chi, op.radius, eps)
        if err > eps:
            log.warning("functional-calculus interpolation error %.2e exceeds %.2e", err, eps)
        series = ChebyshevSeries(coeffs, op.radius)
    return series(op, u)


def chi_series(chi, op: _Operator, eps: float = 1e-8) -> ChebyshevSeries:
    coeffs, _ = function_coefficients(chi, op.radius, eps)
    return ChebyshevSeries(coeffs, op.radius)


def dense_matrix(op: _Operator) -> np.ndarray:
    """Assemble ``op`` column by column (small boxes only)."""
    n = int(np.prod(op.box.shape))
    A = np.empty((n, n), dtype=complex)
    e = np.zeros(n, dtype=complex)
    for j in range(n):
        e[j] = 1.0
        A[:, j] = op.apply(e.reshape(op.box.shape)).ravel()
        e[j] = 0.0
    return A
