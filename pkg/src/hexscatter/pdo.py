"""Pseudodifference operators ``Op(a)`` on ``Z^2`` and the weighted-commutator
kernel estimates behind their boundedness.

Symbols are separable sums ``a(xi, y) = sum_r m_r(xi) w_r(y)``, which covers
Fourier multipliers, multiplication operators and first-order operators such
as the conjugate operator's components.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .lattice import japanese_bracket

__all__ = [
    "PdoSymbol",
    "LatticeMultiplier",
    "apply_op",
    "convolution_kernel",
    "KernelReport",
    "kernel_sums",
    "weighted_commutator_kernel",
    "assemble_weighted_commutator",
    "schur_bound",
    "power_norm",
    "telescoping_check",
    "symbol_smoothness",
]

SymbolFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
WeightFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _one(y1, y2):
    return np.ones(np.broadcast(y1, y2).shape)


@dataclass
class PdoSymbol:
    """``a(xi, y) = sum_r m_r(xi) w_r(y)`` with decay order ``m1`` in ``y``."""

    terms: list[tuple[SymbolFn, WeightFn]]
    m1: float = 0.0

    @classmethod
    def multiplier(cls, m: SymbolFn, m1: float = 0.0) -> "PdoSymbol":
        return cls([(m, _one)], m1)

    @classmethod
    def multiplication(cls, b: WeightFn, m1: float = 0.0) -> "PdoSymbol":
        return cls([(lambda x1, x2: np.ones(np.broadcast(x1, x2).shape), b)], m1)

    @property
    def y_independent(self) -> bool:
        return all(w is _one for _, w in self.terms)

    def __call__(self, xi1, xi2, y1, y2):
        return sum(m(xi1, xi2) * w(y1, y2) for m, w in self.terms)


@dataclass
class LatticeMultiplier:
    b: WeightFn
    m2: float

    def variation_scan(self, radii=(16, 32, 64)) -> list[float]:
        """``max_{|x| <= r} |d~_j b[x]| <x>^{m2}`` over ``j`` for each radius."""
        R = max(radii)
        r = np.arange(-R, R + 1)
        x1, x2 = np.meshgrid(r, r, indexing="ij")
        d = np.maximum(np.abs(self.b(x1, x2) - self.b(x1 - 1, x2)), np.abs(self.b(x1, x2) - self.b(x1, x2 - 1)))
        q = d * japanese_bracket(x1, x2, self.m2)
        dist = np.maximum(np.abs(x1), np.abs(x2))
        return [float(q[dist <= rad].max()) for rad in radii]


def apply_op(a: PdoSymbol, u: np.ndarray) -> np.ndarray:
    """``Op(a) u`` on the periodic box whose side equals ``u``'s (even) side.

    ``Op(a)u[x] = (2 pi)^-2 int sum_y e^{i(x-y).xi} a(xi, y) u[y] dxi`` with the
    integral replaced by the exact torus-grid sum.
    """
    n = u.shape[-1]
    if n % 2:
        raise ValueError("periodic box side must be even")
    L = n // 2
    xs = np.arange(n) - L
    y1, y2 = np.meshgrid(xs, xs, indexing="ij")
    xi = 2 * np.pi * np.fft.fftfreq(n)
    k1, k2 = np.meshgrid(xi, xi, indexing="ij")
    out = np.zeros(u.shape, dtype=complex)
    for m, w in a.terms:
        wu = w(y1, y2) * u
        # with x = index - L, the index shift only contributes a phase that cancels
        out += sfft.ifft2(m(k1, k2) * sfft.fft2(wu))
    return out


def convolution_kernel(m: SymbolFn, reach: int, M: int | None = None) -> tuple[np.ndarray, int]:
    """``A(z) = int e^{i z.xi} m(xi) dxi`` for ``|z_k| <= reach``.

    Computed on a torus of size ``M`` (default: next power of two above
    ``4 * reach``), large enough that aliasing is below roundoff for smooth
    symbols.  Returns ``(A, reach)`` with ``A[z1 + reach, z2 + reach]``.
    """
    if M is None:
        M = 1 << int(np.ceil(np.log2(4 * reach + 2)))
    xi = 2 * np.pi * np.fft.fftfreq(M)
    k1, k2 = np.meshgrid(xi, xi, indexing="ij")
    A = sfft.ifft2(m(k1, k2)) * (2 * np.pi) ** 2
    idx = np.arange(-reach, reach + 1) % M
    return A[np.ix_(idx, idx)], reach


@dataclass
class KernelReport:
    """Summaries of ``T[x,y] = (2 pi)^-2 <x>^p <y>^q (b[x]-b[y]) A[x,y]``."""

    boxLadder: list[int]
    rowSums: list[float]
    colSums: list[float]
    envelopes: list[float]
    envelopeExponent: float
    p: float
    q: float
    growth_tol: float = 1.05

    @property
    def rowSumMax(self) -> float:
        return self.rowSums[-1]

    @property
    def colSumMax(self) -> float:
        return self.colSums[-1]

    def ratios(self, values) -> list[float]:
        return [b / a if a > 0 else (1.0 if b == 0 else np.inf) for a, b in zip(values, values[1:])]

    @property
    def passed(self) -> bool:
        r = self.ratios(self.rowSums) + self.ratios(self.colSums) + self.ratios(self.envelopes)
        finite = all(np.isfinite(v) for v in self.rowSums + self.colSums + self.envelopes)
        return finite and all(x <= self.growth_tol for x in r)

    def to_json(self) -> str:
        d = asdict(self)
        d.update(rowSumMax=self.rowSumMax, colSumMax=self.colSumMax, passed=self.passed)
        return json.dumps(d, indent=2)


def _kernel_tiles(b: WeightFn, a: PdoSymbol, p: float, q: float, L: int, chunk: int = 128):
    """Yield ``(rows, T_block, dz)`` over row chunks of the box ``[-L, L)^2``."""
    xs = np.arange(-L, L)
    x1, x2 = (g.ravel() for g in np.meshgrid(xs, xs, indexing="ij"))
    kernels = [(convolution_kernel(m, 2 * L)[0], w(x1, x2)) for m, w in a.terms]
    bx = b(x1, x2)
    wp = japanese_bracket(x1, x2, p)
    wq = japanese_bracket(x1, x2, q)
    for s in range(0, x1.size, chunk):
        r = slice(s, s + chunk)
        z1 = x1[r, None] - x1[None, :]
        z2 = x2[r, None] - x2[None, :]
        A = sum(K[z1 + 2 * L, z2 + 2 * L] * wy[None, :] for K, wy in kernels)
        T = wp[r, None] * wq[None, :] * (bx[r, None] - bx[None, :]) * A / (2 * np.pi) ** 2
        yield r, T, (z1, z2)


def kernel_sums(b, a, p, q, L):
    """Max row sum, max column sum and ``max |T| <x-y>^3`` on one box."""
    n2 = (2 * L) ** 2
    rows = np.zeros(n2)
    cols = np.zeros(n2)
    env = 0.0
    radial = {}
    for r, T, (z1, z2) in _kernel_tiles(b, a, p, q, L):
        aT = np.abs(T)
        rows[r] = aT.sum(axis=1)
        cols += aT.sum(axis=0)
        dz = np.hypot(z1, z2)
        env = max(env, float((aT * (1 + dz**2) ** 1.5).max()))
        rk = np.rint(dz).astype(int)
        mx = np.zeros(rk.max() + 1)
        np.maximum.at(mx, rk.ravel(), aT.ravel())
        for k, v in enumerate(mx):
            if v > radial.get(k, 0.0):
                radial[k] = float(v)
    return float(rows.max()), float(cols.max()), env, radial


def _envelope_exponent(radial: dict[int, float]) -> float:
    ks = np.array(sorted(k for k, v in radial.items() if k >= 2 and v > 1e-14))
    if ks.size < 3:
        return -np.inf
    vals = np.array([radial[k] for k in ks])
    # fit the decay of the running upper envelope
    env = np.maximum.accumulate(vals[::-1])[::-1]
    slope, _ = np.polyfit(np.log(np.sqrt(1 + ks**2.0)), np.log(env), 1)
    return float(slope)


def weighted_commutator_kernel(
    b: LatticeMultiplier, a: PdoSymbol, p: float, q: float, ladder: Sequence[int] = (16, 32, 64),
    growth_tol: float = 1.05,
) -> KernelReport:
    """Kernel of ``<x>^p [b, Op(a)] <x>^q`` on a ladder of boxes."""
    if abs(p + q - (a.m1 + b.m2)) > 1e-12:
        raise ValueError(f"weights must balance: p + q = {p + q:g} but m1 + m2 = {a.m1 + b.m2:g}")
    rows, cols, envs = [], [], []
    radial = {}
    for L in ladder:
        r, c, e, rad = kernel_sums(b.b, a, p, q, L)
        rows.append(r)
        cols.append(c)
        envs.append(e)
        radial = rad
    return KernelReport(list(ladder), rows, cols, envs, _envelope_exponent(radial), p, q, growth_tol)


def assemble_weighted_commutator(b: WeightFn, a: PdoSymbol, p: float, q: float, L: int) -> np.ndarray:
    n2 = (2 * L) ** 2
    T = np.empty((n2, n2), dtype=complex)
    for r, blk, _ in _kernel_tiles(b, a, p, q, L):
        T[r] = blk
    return T


def schur_bound(T: np.ndarray) -> float:
    aT = np.abs(T)
    return float(np.sqrt(aT.sum(axis=1).max() * aT.sum(axis=0).max()))


def power_norm(matvec, rmatvec, shape, rng=None, tol: float = 1e-6, maxiter: int = 500, x0=None) -> float:
    """Operator norm by power iteration on ``T^* T``."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = x0 if x0 is not None else rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x = x / np.linalg.norm(x)
    est = 0.0
    for _ in range(maxiter):
        y = rmatvec(matvec(x))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(est)


def telescoping_check(W: WeightFn, pairs: np.ndarray) -> float:
    """Max of ``|W[x]-W[y]| - sum_i |W[z^i+y]-W[z^{i-1}+y]|`` over pairs.

    The lattice path walks axis 1 then axis 2; the result must be ``<= 0``.
    """
    worst = -np.inf
    for x1, x2, y1, y2 in pairs:
        path = [(y1, y2)]
        s1 = 1 if x1 >= y1 else -1
        for k in range(y1 + s1, x1 + s1, s1) if x1 != y1 else []:
            path.append((k, y2))
        s2 = 1 if x2 >= y2 else -1
        for k in range(y2 + s2, x2 + s2, s2) if x2 != y2 else []:
            path.append((x1, k))
        P = np.array(path, dtype=float)
        vals = W(P[:, 0], P[:, 1])
        lhs = abs(W(float(x1), float(x2)) - W(float(y1), float(y2)))
        worst = max(worst, float(lhs - np.abs(np.diff(vals)).sum()))
    return worst


def symbol_smoothness(m: SymbolFn, N: int = 256, max_order: int = 3) -> list[float]:
    """Spectral bounds ``sum_z |c_z| |z|^k >= sup |d^k m|`` for ``k <= max_order``.

    ``c_z`` are the Fourier coefficients of the periodic symbol; finite,
    N-stable values certify the derivative bounds.
    """
    xi = 2 * np.pi * np.fft.fftfreq(N)
    k1, k2 = np.meshgrid(xi, xi, indexing="ij")
    c = np.abs(sfft.ifft2(m(k1, k2)))
    z = np.fft.fftfreq(N) * N
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    r = np.hypot(z1, z2)
    return [float(np.sum(c * r**k)) for k in range(max_order + 1)]
