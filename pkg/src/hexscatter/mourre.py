"""Conjugate operator, commutator multipliers, Mourre constants, eigenvalue
counting, limiting-absorption scans and Kato-smoothness checks.

``A = U' diag(A+, A-) U'^*`` with ``A+- = 1/2 sum_j (d_j lam_+-(D) x_j + x_j d_j lam_+-(D))``.
On zero-padded boxes every Fourier multiplier is the compression of the
infinite-lattice one, so ladder scans over ``L`` see truncations of a single
operator.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import optimize

from .fourier import apply_multiplier, torus_size
from .lattice import LatticeBox, Potential, PotentialSpec, realize_potential
from .pdo import power_norm
from .propagators import FreeOperator, PerturbedOperator
from .symbols import Bands, EnergyWindow, SymbolGrid, TorusGrid, THRESHOLDS, window_function

log = logging.getLogger(__name__)

__all__ = [
    "ConjugateOperator",
    "build_conjugate",
    "CommutatorField",
    "commutator_field",
    "CommutatorCheck",
    "commutator_H0prime_A",
    "smooth_probe",
    "gradient_check",
    "MourreResult",
    "mourre_constant",
    "projected_commutator_bound",
    "LadderReport",
    "perturbed_mourre_check",
    "C11Scan",
    "c11_integrand_scan",
    "EigenCount",
    "eigen_count",
    "LevelSpacingError",
    "LapScan",
    "lap_scan",
    "KatoReport",
    "kato_smooth_check",
]


def _adjoint(U: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(U, -1, -2))


# ---------------------------------------------------------------- conjugate operator


class ConjugateOperator:
    """Matrix-free ``A`` and ``A~`` on one box.

    Only the band data enters; the potential never does.
    """

    def __init__(self, box: LatticeBox, bands: Bands):
        self.box, self.bands = box, bands
        self.M = torus_size(box)

    @cached_property
    def _fields(self):
        F = self.bands.fft_fields(self.M)
        return F.grad, F.U, _adjoint(F.U)

    def _half(self, w: np.ndarray, sign: float) -> np.ndarray:
        (g1, g2), _, _ = self._fields
        x1, x2 = self.box.coords
        out = np.zeros_like(w, dtype=complex)
        for g, x in ((g1, x1), (g2, x2)):
            out += apply_multiplier(x * w, self.box, g) + x * apply_multiplier(w, self.box, g)
        return 0.5 * sign * out

    def apply_tilde(self, w: np.ndarray) -> np.ndarray:
        """``A~ = diag(A+, A-)``; ``grad lam_- = -grad lam_+``."""
        return np.stack([self._half(w[0], 1.0), self._half(w[1], -1.0)])

    def apply(self, u: np.ndarray) -> np.ndarray:
        _, U, Ua = self._fields
        return apply_multiplier(self.apply_tilde(apply_multiplier(u, self.box, Ua)), self.box, U)

    __call__ = apply

    def symmetry_defect(self, rng: np.random.Generator, pairs: int = 3) -> float:
        """``max |<Au, w> - <u, Aw>|`` over random unit pairs."""
        worst = 0.0
        for _ in range(pairs):
            u = self.box.random_state(rng)
            w = self.box.random_state(rng)
            u /= np.linalg.norm(u)
            w /= np.linalg.norm(w)
            worst = max(worst, abs(np.vdot(self.apply(u), w) - np.vdot(u, self.apply(w))))
        return float(worst)


def build_conjugate(symbols: SymbolGrid | Bands, box: LatticeBox | None = None) -> ConjugateOperator:
    """``A`` on ``box``; defaults to the periodic box matching a symbol grid."""
    bands = symbols.bands if isinstance(symbols, SymbolGrid) else symbols
    if box is None:
        if not isinstance(symbols, SymbolGrid):
            raise ValueError("a box is required when building from band data")
        box = LatticeBox(symbols.grid.N // 2, "periodic")
    return ConjugateOperator(box, bands)


# ---------------------------------------------------------------- commutator multiplier


@dataclass
class CommutatorField:
    """``diag(|grad lam_+|^2, |grad lam_-|^2)`` on a torus grid."""

    grid: TorusGrid
    plus: np.ndarray
    minus: np.ndarray
    lam: np.ndarray

    @property
    def nonnegative(self) -> bool:
        return bool((self.plus >= 0).all() and (self.minus >= 0).all())

    def band_symmetry_defect(self) -> float:
        return float(np.abs(self.plus - self.minus).max())

    def min_on_window(self, window: EnergyWindow) -> float:
        vals = np.concatenate([self.plus[window.contains(self.lam)], self.minus[window.contains(-self.lam)]])
        return float(vals.min()) if vals.size else np.inf


def commutator_field(bands: Bands, grid: TorusGrid) -> CommutatorField:
    xi1, xi2 = grid.mesh()
    g1, g2 = bands.grad_lam(xi1, xi2)
    m = g1**2 + g2**2
    return CommutatorField(grid, m, m.copy(), bands.lam(xi1, xi2))


@dataclass
class CommutatorCheck:
    direct: np.ndarray
    closed: np.ndarray
    error: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


def commutator_H0prime_A(u: np.ndarray, box: LatticeBox, bands: Bands, tol: float = 1e-9) -> CommutatorCheck:
    """``[H'_0, iA] u`` directly and via ``U' diag(|grad lam|^2)(D) U'^*``.

    The two agree exactly on the infinite lattice.  On a torus the position
    multiplier wraps, so ``u`` should be supported well inside the box; the
    error is reported relative to ``|u|``.
    """
    if not box.periodic:
        raise ValueError("commutator_H0prime_A needs a periodic box")
    A = ConjugateOperator(box, bands)
    Hp = FreeOperator(box, bands, "H'0")
    direct = 1j * (Hp.apply(A.apply(u)) - A.apply(Hp.apply(u)))
    F = bands.fft_fields(box.side)
    m = F.grad[0] ** 2 + F.grad[1] ** 2
    D = np.zeros(m.shape + (2, 2))
    D[..., 0, 0] = m
    D[..., 1, 1] = m
    closed = apply_multiplier(u, box, F.U @ D @ _adjoint(F.U))
    err = float(np.linalg.norm(direct - closed) / np.linalg.norm(u))
    return CommutatorCheck(direct, closed, err, tol)


def smooth_probe(box: LatticeBox, rng: np.random.Generator, interior: int = 6, power: int = 16) -> np.ndarray:
    """Random unit state ``H0^power v`` with ``v`` supported in ``|x_k| < interior``.

    Still compactly supported, but with spectral weight ``p^power`` near the
    Dirac points, where the gap cutoff gives the band kernels slowly decaying
    tails that wrap around a finite torus.
    """
    from .lattice import apply_H0

    u = box.random_state(rng, interior=interior)
    for _ in range(power):
        u = apply_H0(u, box)
    return u / np.linalg.norm(u)


def gradient_check(bands: Bands, rng: np.random.Generator, n: int = 100, h: float = 1e-3) -> float:
    """Max deviation of the closed-form ``grad lam_+`` from five-point differences."""
    xi = rng.uniform(-np.pi, np.pi, size=(2, n))
    g = bands.grad_lam(xi[0], xi[1])
    worst = 0.0
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        f = [bands.lam(*(xi + j * e)) for j in (-2, -1, 1, 2)]
        fd = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
        worst = max(worst, float(np.abs(g[k] - fd).max()))
    return worst


# ---------------------------------------------------------------- Mourre constant


@dataclass
class MourreResult:
    c: float
    grid_min: float
    argmin: tuple[float, float]
    N: int
    window: tuple[float, float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def mourre_constant(window: EnergyWindow, bands: Bands, N: int = 3072, starts: int = 8) -> MourreResult:
    """``inf |grad lam|^2`` over the in-window momenta of both bands.

    A grid scan over the closed window is refined by constrained descent
    (SLSQP) from the best grid points.  ``lam_- = -lam_+`` so both bands
    reduce to ``lam_+`` on ``{+-lam_+ in window}``.
    """
    for t in THRESHOLDS:
        if window.a <= t <= window.b:
            raise ValueError(f"window ({window.a}, {window.b}) touches the critical value {t:g}")
    lo, hi = (window.a, window.b) if window.a > 0 else (-window.b, -window.a)
    if lo < 0:
        raise ValueError("window straddles 0")
    grid = TorusGrid(N)
    xi1, xi2 = grid.mesh()
    lam = bands.lam(xi1, xi2)
    g1, g2 = bands.grad_lam(xi1, xi2)
    m = g1**2 + g2**2
    inside = (lam >= lo) & (lam <= hi)
    if not inside.any():
        raise ValueError("no grid momentum falls in the window; refine N")
    vals = np.where(inside, m, np.inf).ravel()
    grid_min = float(vals.min())
    order = np.argsort(vals)
    picks: list[int] = []
    for i in order:
        if len(picks) >= starts or not np.isfinite(vals[i]):
            break
        z = np.array([xi1.ravel()[i], xi2.ravel()[i]])
        if all(np.hypot(*(z - np.array([xi1.ravel()[j], xi2.ravel()[j]]))) > 0.3 for j in picks):
            picks.append(int(i))

    def f(z):
        a, b = bands.grad_lam(z[0], z[1])
        return float(a**2 + b**2)

    cons = [
        {"type": "ineq", "fun": lambda z: float(bands.lam(z[0], z[1]) - lo)},
        {"type": "ineq", "fun": lambda z: float(hi - bands.lam(z[0], z[1]))},
    ]
    best, arg = grid_min, (float(xi1.ravel()[order[0]]), float(xi2.ravel()[order[0]]))
    for i in picks:
        z0 = np.array([xi1.ravel()[i], xi2.ravel()[i]])
        res = optimize.minimize(f, z0, method="SLSQP", constraints=cons, options={"ftol": 1e-15, "maxiter": 200})
        z = res.x
        ok = lo - 1e-9 <= bands.lam(z[0], z[1]) <= hi + 1e-9
        if ok and res.fun < best:
            best, arg = float(res.fun), (float(z[0]), float(z[1]))
    if not best > 0:
        raise ValueError(f"Mourre constant degenerates ({best:g}) on window ({window.a}, {window.b})")
    return MourreResult(best, grid_min, arg, N, (window.a, window.b))


def projected_commutator_bound(bands: Bands, window: EnergyWindow, N: int = 384, ramp: float = 0.05,
                               tol: float = 1e-10) -> float:
    """Smallest eigenvalue of ``Pi [H'_0, iA] Pi`` on ``ran Pi`` for ``Pi = chi(H'_0)``.

    Both operators are multipliers on the periodic torus, so the compression
    splits into ``2 x 2`` problems per grid momentum.
    """
    xi1, xi2 = TorusGrid(N).mesh()
    chi = window_function(window.a, window.b, ramp)
    U = bands.uprime(xi1, xi2)
    lam = bands.lam(xi1, xi2)
    g1, g2 = bands.grad_lam(xi1, xi2)
    m = g1**2 + g2**2
    Pi = (U * np.stack([chi(lam), chi(-lam)], -1)[..., None, :]) @ _adjoint(U)
    C = (U * np.stack([m, m], -1)[..., None, :]) @ _adjoint(U)
    w, Q = np.linalg.eigh(Pi)
    best = np.inf
    for k in range(2):
        keep = w[..., k] > tol
        if keep.any():
            q = Q[..., :, k][keep]
            val = np.einsum("ni,nij,nj->n", q.conj(), C[keep], q).real
            best = min(best, float(val.min()))
    return best


# ---------------------------------------------------------------- perturbed commutators


@dataclass
class LadderReport:
    ladder: list[int]
    norms: dict[str, list[float]]
    growth_tol: float = 1.05

    def ratios(self, name: str) -> list[float]:
        v = self.norms[name]
        return [b / a if a > 0 else (1.0 if b == 0 else np.inf) for a, b in zip(v, v[1:])]

    def stable(self, name: str) -> bool:
        return all(np.isfinite(self.norms[name])) and all(r <= self.growth_tol for r in self.ratios(name))

    @property
    def passed(self) -> bool:
        return all(self.stable(k) for k in self.norms)

    def to_json(self) -> str:
        d = asdict(self)
        d["ratios"] = {k: self.ratios(k) for k in self.norms}
        d["passed"] = self.passed
        return json.dumps(d, indent=2)


def _weighted_commutator(W: np.ndarray | None, box: LatticeBox, A: ConjugateOperator, rho: float,
                         conjugated: bool = False):
    """``<x>^rho [W, iA]`` and its adjoint as callables.

    With ``conjugated`` the multiplier ``W`` acts as ``U' W U'^*`` and the
    commutator is evaluated through ``U'^* [U' W U'^*, iA] U' = [W, iA~]``.
    """
    X = box.bracket(rho)
    if W is None:
        zero = lambda u: np.zeros_like(u)  # noqa: E731
        return zero, zero
    if not conjugated:
        T = lambda u: X * 1j * (W * A(u) - A(W * u))  # noqa: E731
        Tt = lambda u: -1j * (A(W * X * u) - W * A(X * u))  # noqa: E731
        return T, Tt
    _, U, Ua = A._fields
    box_ = A.box
    At = A.apply_tilde

    def T(u):
        v = apply_multiplier(u, box_, Ua)
        return X * apply_multiplier(1j * (W * At(v) - At(W * v)), box_, U)

    def Tt(u):
        v = apply_multiplier(X * u, box_, Ua)
        return apply_multiplier(-1j * (At(W * v) - W * At(v)), box_, U)

    return T, Tt


def perturbed_mourre_check(bands: Bands, spec: PotentialSpec, ladder: Sequence[int] = (16, 32, 64),
                           growth_tol: float = 1.05, tol: float = 1e-6, maxiter: int = 500,
                           seed: int = 0) -> LadderReport:
    """Norms of ``<x>^rho [W, iA]`` for ``W = V_s, V_l, U' V_l U'^*`` on zero-padded boxes."""
    norms: dict[str, list[float]] = {"V_s": [], "V_l": [], "U'V_lU'*": []}
    for L in ladder:
        box = LatticeBox(L, "zero-padded")
        A = ConjugateOperator(box, bands)
        P = realize_potential(spec, box)
        Vs = np.stack([P.V_short1, P.V_short2]) if np.any(P.V_short1) or np.any(P.V_short2) else None
        Vl = P.V_long if np.any(P.V_long) else None
        cases = {
            "V_s": _weighted_commutator(Vs, box, A, spec.rho),
            "V_l": _weighted_commutator(Vl, box, A, spec.rho),
            "U'V_lU'*": _weighted_commutator(Vl, box, A, spec.rho, conjugated=True),
        }
        for name, (T, Tt) in cases.items():
            n = power_norm(T, Tt, box.shape, np.random.default_rng(seed), tol, maxiter)
            norms[name].append(n)
            log.info("weighted commutator %s L=%d norm=%.4g", name, L, n)
    return LadderReport(list(ladder), norms, growth_tol)


# ---------------------------------------------------------------- C^{1,1} integrand


def dyadic_bump(t):
    """Smooth bump supported in ``(1/2, 2)``."""
    from .symbols import smooth_step

    t = np.asarray(t, dtype=float)
    return smooth_step((t - 0.5) / 0.5) * smooth_step((2.0 - t) / 1.0)


@dataclass
class C11Scan:
    scales: list[float]
    norms: list[float]
    exponent: float
    rho: float
    slack: float = 0.1

    @property
    def passed(self) -> bool:
        if all(n == 0 for n in self.norms):
            return True
        return bool(np.isfinite(self.exponent) and self.exponent <= -self.rho + self.slack)

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, indent=2)


def c11_integrand_scan(bands: Bands, spec: PotentialSpec, which: str = "V_l", kmax: int = 6,
                       L: int | None = None, theta: Callable = dyadic_bump, tol: float = 1e-6,
                       seed: int = 0) -> C11Scan:
    """``|theta(<x>/lam) [W, iA]|`` for ``lam = 2^k``, ``k = 0..kmax``.

    The box must contain the shell ``<x> < 2 lam``; by default ``L = 2^(kmax+1)``.
    """
    L = L or 2 ** (kmax + 1)
    box = LatticeBox(L, "zero-padded")
    A = ConjugateOperator(box, bands)
    P = realize_potential(spec, box)
    if which == "V_l":
        W = P.V_long
    elif which == "V_s":
        W = np.stack([P.V_short1, P.V_short2])
    else:
        raise ValueError(f"which must be 'V_l' or 'V_s', got {which!r}")
    if not np.any(W):
        W = None
    T0, T0t = _weighted_commutator(W, box, A, 0.0)
    Xb = box.bracket(1.0)
    scales, norms = [], []
    for k in range(kmax + 1):
        lam = 2.0**k
        th = theta(Xb / lam)
        T = lambda u, th=th: th * T0(u)  # noqa: E731
        Tt = lambda u, th=th: T0t(th * u)  # noqa: E731
        scales.append(lam)
        norms.append(power_norm(T, Tt, box.shape, np.random.default_rng(seed), tol))
    nz = np.array(norms) > 0
    if nz.sum() >= 2:
        slope = float(np.polyfit(np.log(np.array(scales)[nz]), np.log(np.array(norms)[nz]), 1)[0])
    else:
        slope = -np.inf
    return C11Scan(scales, norms, slope, spec.rho)


# ---------------------------------------------------------------- eigenvalues


@dataclass
class EigenCount:
    ladder: list[int]
    counts: list[int]
    eigenvalues: list[list[float]]
    interior_threshold: float

    @property
    def stable(self) -> bool:
        return len(set(self.counts[-2:])) == 1

    @property
    def count(self) -> int:
        return self.counts[-1]


def interior_mass(v: np.ndarray, box: LatticeBox) -> np.ndarray:
    """Fraction of each column's mass within ``|x|_inf < L/2``."""
    x1, x2 = box.coords
    inner = ((np.abs(x1) < box.L / 2) & (np.abs(x2) < box.L / 2)).ravel()
    inner = np.concatenate([inner, inner])
    a = np.abs(v) ** 2
    return a[inner].sum(axis=0) / a.sum(axis=0)


def eigen_count(window: EnergyWindow, spec: PotentialSpec, ladder: Sequence[int] = (12, 16, 20),
                interior_threshold: float = 0.9) -> EigenCount:
    """Interior-localized eigenvalues of ``H`` in the window on zero-padded boxes."""
    counts, evs = [], []
    for L in ladder:
        box = LatticeBox(L, "zero-padded")
        H = PerturbedOperator(realize_potential(spec, box)).matrix.toarray()
        w, v = np.linalg.eigh(H)
        sel = window.contains(w)
        frac = interior_mass(v[:, sel], box)
        found = w[sel][frac >= interior_threshold]
        counts.append(int(found.size))
        evs.append([float(e) for e in found])
    return EigenCount(list(ladder), counts, evs, interior_threshold)


# ---------------------------------------------------------------- resolvent scans


class LevelSpacingError(ValueError):
    """An ``epsilon`` below the truncation-honesty floor was requested."""


def level_spacing(H: sp.spmatrix, lam: float, k: int = 12) -> float:
    """Mean spacing of the ``k`` eigenvalues of ``H`` nearest ``lam``."""
    w = spla.eigsh(H.tocsc(), k=k, sigma=lam, which="LM", return_eigenvectors=False)
    w = np.sort(w)
    return float(np.mean(np.diff(w)))


@dataclass
class LapScan:
    energies: list[float]
    eps: list[float]
    norms: list[list[float]]
    spacing: list[float]
    s: float
    plateau_tol: float = 0.10

    def variation(self, i: int) -> float:
        """``max/min - 1`` over the epsilon ladder at energy ``i``."""
        row = np.array(self.norms[i])
        return float(row.max() / row.min() - 1.0)

    @property
    def sup(self) -> float:
        return float(np.max(self.norms))

    @property
    def passed(self) -> bool:
        return all(self.variation(i) <= self.plateau_tol for i in range(len(self.energies)))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("energy,eps,norm\n")
            for i, e in enumerate(self.energies):
                for j, ep in enumerate(self.eps):
                    fh.write(f"{e!r},{ep!r},{self.norms[i][j]!r}\n")

    def to_json(self) -> str:
        d = asdict(self)
        d["variation"] = [self.variation(i) for i in range(len(self.energies))]
        d["passed"] = self.passed
        return json.dumps(d, indent=2)


def _resolvent_norm(H: sp.spmatrix, z: complex, weight: np.ndarray, tol: float, seed: int) -> float:
    n = H.shape[0]
    lu = spla.splu((H - z * sp.identity(n, format="csc")).tocsc())
    mv = lambda u: weight * lu.solve(weight * u)  # noqa: E731
    rmv = lambda u: weight * lu.solve(weight * u, trans="H")  # noqa: E731
    return power_norm(mv, rmv, (n,), np.random.default_rng(seed), tol)


def lap_scan(potential: Potential, energies: Sequence[float], eps: Sequence[float], s: float = 0.75,
             honesty: float = 3.0, tol: float = 1e-6, seed: int = 0, sign: int = 1) -> LapScan:
    """``|<x>^-s (H - lam -+ i eps)^-1 <x>^-s|`` over a ``(lam, eps)`` mesh."""
    if s <= 0.5:
        raise ValueError(f"weight exponent s must exceed 1/2, got {s}")
    H = PerturbedOperator(potential).matrix.tocsc()
    box = potential.box
    weight = np.tile(box.bracket(-s).ravel(), 2)
    spacing = [level_spacing(H, e) for e in energies]
    floor = honesty * max(spacing)
    if min(eps) < floor:
        raise LevelSpacingError(f"eps = {min(eps):g} is below {honesty:g} x level spacing = {floor:.3g}")
    norms = [[_resolvent_norm(H, e + sign * 1j * ep, weight, tol, seed) for ep in eps] for e in energies]
    return LapScan([float(e) for e in energies], [float(e) for e in eps], norms, spacing, s)


@dataclass
class KatoReport:
    sup: float
    values: list[list[float]]
    lap_sup: float | None = None

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.sup))

    @property
    def consistent(self) -> bool:
        """``G delta G^*`` is a difference of two resolvents over ``2 pi``."""
        return self.finite and (self.lap_sup is None or self.sup <= self.lap_sup / np.pi * 1.05)


def kato_smooth_check(potential: Potential, window: EnergyWindow, energies: Sequence[float],
                      eps: Sequence[float], s: float = 0.75, ramp: float = 0.05,
                      lap: LapScan | None = None, max_dim: int = 6000) -> KatoReport:
    """``sup |G delta(lam, eps) G^*|`` with ``G = <x>^-s chi(H)`` and
    ``delta = (R(lam + i eps) - R(lam - i eps)) / (2 pi i)``.

    Uses the full eigendecomposition of ``H``, in which ``chi(H)`` and
    ``delta`` are diagonal, so the box must be small (``2 (2L)^2 <= max_dim``).
    """
    H = PerturbedOperator(potential).matrix
    n = H.shape[0]
    if n > max_dim:
        raise ValueError(f"dense Kato check limited to dimension {max_dim}, box has {n}")
    box = potential.box
    lam, Q = np.linalg.eigh(H.toarray())
    chi = window_function(window.a, window.b, ramp)
    c2 = chi(lam) ** 2
    keep = c2 > 0
    WQ = np.tile(box.bracket(-s).ravel(), 2)[:, None] * Q[:, keep]
    # |W Q D Q^* W| = |W Q sqrt(D)|^2; the Gram matrix is at most n x n
    G = WQ.conj().T @ WQ
    values = []
    for e in energies:
        row = []
        for ep in eps:
            d = np.sqrt(c2[keep] * ep / np.pi / ((lam[keep] - e) ** 2 + ep**2))
            row.append(float(np.linalg.eigvalsh(d[:, None] * G * d[None, :])[-1]))
        values.append(row)
    return KatoReport(float(np.max(values)), values, lap.sup if lap is not None else None)
