"""Momentum-space objects: the Bloch symbol, the gap-opened modified symbol,
band functions and their diagonalizer.

All evaluators accept arrays ``xi1, xi2`` of any (broadcastable) shape;
matrix-valued symbols come back with two trailing axes of size 2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

__all__ = [
    "THRESHOLDS",
    "TorusGrid",
    "EnergyWindow",
    "KappaCutoff",
    "build_kappa",
    "Bands",
    "SymbolGrid",
    "build_symbol_grid",
    "eval_alpha",
    "p_squared",
    "grad_p_squared",
    "CriticalReport",
    "eval_p_and_critical_points",
    "smooth_step",
    "window_function",
    "multiplier_projection",
    "h0_function",
]

THRESHOLDS = (-3.0, -1.0, 0.0, 1.0, 3.0)
DIRAC_POINTS = ((2 * np.pi / 3, -2 * np.pi / 3), (-2 * np.pi / 3, 2 * np.pi / 3))


def eval_alpha(xi1, xi2):
    """Off-diagonal entry ``alpha(xi) = -(1 + e^{i xi1} + e^{i xi2})``."""
    return -(1.0 + np.exp(1j * np.asarray(xi1)) + np.exp(1j * np.asarray(xi2)))


def p_squared(xi1, xi2):
    return 3.0 + 2.0 * np.cos(xi1) + 2.0 * np.cos(xi2) + 2.0 * np.cos(np.subtract(xi1, xi2))


def grad_p_squared(xi1, xi2):
    s12 = np.sin(np.subtract(xi1, xi2))
    return -2.0 * np.sin(xi1) - 2.0 * s12, -2.0 * np.sin(xi2) + 2.0 * s12


@dataclass(frozen=True)
class TorusGrid:
    """``xi_k = -pi + 2 pi j / N`` per axis."""

    N: int

    def __post_init__(self):
        if self.N <= 0 or self.N % 2:
            raise ValueError(f"torus grid size must be a positive even integer, got {self.N}")

    @property
    def axis(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * np.arange(self.N) / self.N

    def mesh(self):
        a = self.axis
        return np.meshgrid(a, a, indexing="ij")

    @property
    def cell(self) -> float:
        return (2 * np.pi / self.N) ** 2

    def index_of(self, xi1: float, xi2: float) -> tuple[int, int] | None:
        """Grid index of a point if it lies on the grid (mod 2 pi)."""
        out = []
        for v in (xi1, xi2):
            j = (v + np.pi) * self.N / (2 * np.pi)
            jr = round(j)
            if abs(j - jr) > 1e-9:
                return None
            out.append(int(jr) % self.N)
        return tuple(out)


@dataclass(frozen=True)
class EnergyWindow:
    """Open interval ``(a, b)`` whose closure avoids the thresholds."""

    a: float
    b: float
    margin: float = 0.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"window needs a < b, got ({self.a}, {self.b})")
        if self.a < -3 - 1e-12 or self.b > 3 + 1e-12:
            raise ValueError(f"window ({self.a}, {self.b}) leaves the band [-3, 3]")
        for t in THRESHOLDS:
            if self.a - self.margin <= t <= self.b + self.margin:
                raise ValueError(
                    f"window ({self.a}, {self.b}) must avoid the threshold {t:g} "
                    f"(thresholds {{0, +-1, +-3}}, margin {self.margin:g})"
                )

    @property
    def delta(self) -> float:
        """Distance from 0 to the window."""
        return min(abs(self.a), abs(self.b))

    def contains(self, lam):
        lam = np.asarray(lam)
        return (lam > self.a) & (lam < self.b)


def _bump(s):
    """``exp(1 - 1/(1 - s^2))`` on ``[0, 1)``, zero beyond; equals 1 at 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = s < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def _bump_deriv(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = s < 1.0
    q = 1.0 - s[m] ** 2
    out[m] = np.exp(1.0 - 1.0 / q) * (-2.0 * s[m] / q**2)
    return out


@dataclass(frozen=True)
class KappaCutoff:
    """``kappa(E) = g * bump(E / E_c)`` with support ``[0, E_c)``, ``E_c <= delta^2/4``."""

    delta: float
    gap: float
    support: float

    def __call__(self, E):
        return self.gap * _bump(np.asarray(E, dtype=float) / self.support)

    def deriv(self, E):
        return self.gap * _bump_deriv(np.asarray(E, dtype=float) / self.support) / self.support

    def check(self, n: int = 100_000) -> float:
        """Max of ``E + kappa(E)^2`` over a dense scan of ``[0, delta^2/4]``."""
        E = np.linspace(0.0, self.delta**2 / 4, n)
        vals = E[:-1] + self(E[:-1]) ** 2
        if not (np.all(vals > 0) and vals.max() < self.delta**2 / 4):
            raise ValueError("kappa profile violates 0 < E + kappa(E)^2 < delta^2/4")
        if self(E[-1]) != 0.0:
            raise ValueError("kappa does not vanish at delta^2/4")
        return float(vals.max())


def build_kappa(window: EnergyWindow, gap: float, n_scan: int = 100_000) -> KappaCutoff:
    delta = window.delta
    if not 0 < gap < delta / 2:
        raise ValueError(f"gap g must lie in (0, delta/2) = (0, {delta / 2:g}), got {gap}")
    # shrink the support until the scan certifies the constraint
    support = delta**2 / 4
    for _ in range(40):
        kappa = KappaCutoff(delta, gap, support)
        try:
            kappa.check(n_scan)
            return kappa
        except ValueError:
            support *= 0.5
    raise ValueError("could not fit a kappa profile for this gap")


class Bands:
    """Closed-form evaluation of ``H0(xi)``, ``H'(xi)``, ``lambda_+-``, ``U'(xi)``."""

    def __init__(self, kappa: KappaCutoff):
        self.kappa = kappa

    def kappa_p2(self, xi1, xi2):
        return self.kappa(p_squared(xi1, xi2))

    def lam(self, xi1, xi2):
        """Upper band ``lambda_+``; the lower band is ``-lambda_+``."""
        q = p_squared(xi1, xi2)
        return np.sqrt(self.kappa(q) ** 2 + np.maximum(q, 0.0))

    def grad_lam(self, xi1, xi2):
        q = p_squared(xi1, xi2)
        k = self.kappa(q)
        lam = np.sqrt(k**2 + np.maximum(q, 0.0))
        fac = (2.0 * k * self.kappa.deriv(q) + 1.0) / (2.0 * lam)
        g1, g2 = grad_p_squared(xi1, xi2)
        return fac * g1, fac * g2

    def h0(self, xi1, xi2):
        a = eval_alpha(xi1, xi2)
        out = np.zeros(np.shape(a) + (2, 2), dtype=complex)
        out[..., 0, 1] = np.conj(a)
        out[..., 1, 0] = a
        return out

    def hprime(self, xi1, xi2):
        out = self.h0(xi1, xi2)
        k = self.kappa_p2(xi1, xi2)
        out[..., 0, 0] = k
        out[..., 1, 1] = -k
        return out

    def cnorm(self, xi1, xi2):
        q = p_squared(xi1, xi2)
        kl = self.kappa(q) + self.lam(xi1, xi2)
        return np.sqrt(q + kl**2)

    def uprime(self, xi1, xi2):
        a = eval_alpha(xi1, xi2)
        kl = self.kappa_p2(xi1, xi2) + self.lam(xi1, xi2)
        c = np.sqrt(np.abs(a) ** 2 + kl**2)
        out = np.empty(np.shape(a) + (2, 2), dtype=complex)
        out[..., 0, 0] = kl / c
        out[..., 0, 1] = -np.conj(a) / c
        out[..., 1, 0] = a / c
        out[..., 1, 1] = kl / c
        return out

    def fft_fields(self, M: int) -> "FFTFields":
        return _fft_fields(self, M)


@dataclass
class FFTFields:
    """Band data sampled on the FFT-ordered grid ``xi_k = 2 pi k / M`` (wrapped)."""

    M: int
    xi1: np.ndarray
    xi2: np.ndarray
    lam: np.ndarray
    grad: tuple[np.ndarray, np.ndarray]
    U: np.ndarray
    h0: np.ndarray
    hprime: np.ndarray


@lru_cache(maxsize=4)
def _fft_fields(bands: Bands, M: int) -> FFTFields:
    f = 2 * np.pi * np.fft.fftfreq(M)
    xi1, xi2 = np.meshgrid(f, f, indexing="ij")
    return FFTFields(
        M, xi1, xi2, bands.lam(xi1, xi2), bands.grad_lam(xi1, xi2), bands.uprime(xi1, xi2),
        bands.h0(xi1, xi2), bands.hprime(xi1, xi2),
    )


@dataclass
class SymbolGrid:
    grid: TorusGrid
    window: EnergyWindow
    kappa: KappaCutoff
    xi1: np.ndarray
    xi2: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    kappa_of_p2: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    Uprime: np.ndarray
    Cnorm: np.ndarray
    bands: Bands = field(repr=False)

    def diagonalization_residual(self) -> float:
        Hp = self.bands.hprime(self.xi1, self.xi2)
        D = np.conj(np.swapaxes(self.Uprime, -1, -2)) @ Hp @ self.Uprime
        D[..., 0, 0] -= self.lambda_plus
        D[..., 1, 1] -= self.lambda_minus
        return float(np.abs(D).max())

    def unitarity_residual(self) -> float:
        G = self.Uprime @ np.conj(np.swapaxes(self.Uprime, -1, -2)) - np.eye(2)
        return float(np.sqrt(np.sum(np.abs(G) ** 2, axis=(-2, -1))).max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi1", "xi2", "re_alpha", "im_alpha", "p", "lambda_plus"])
            for row in zip(
                self.xi1.ravel(), self.xi2.ravel(), self.alpha.real.ravel(), self.alpha.imag.ravel(),
                self.p.ravel(), self.lambda_plus.ravel(),
            ):
                w.writerow([repr(float(v)) for v in row])


def build_symbol_grid(grid: TorusGrid, window: EnergyWindow, kappa: KappaCutoff) -> SymbolGrid:
    bands = Bands(kappa)
    xi1, xi2 = grid.mesh()
    alpha = eval_alpha(xi1, xi2)
    lam = bands.lam(xi1, xi2)
    return SymbolGrid(
        grid=grid, window=window, kappa=kappa, xi1=xi1, xi2=xi2, alpha=alpha, p=np.abs(alpha),
        kappa_of_p2=bands.kappa_p2(xi1, xi2), lambda_plus=lam, lambda_minus=-lam,
        Uprime=bands.uprime(xi1, xi2), Cnorm=bands.cnorm(xi1, xi2), bands=bands,
    )


# ---------------------------------------------------------------- critical set


@dataclass
class CriticalReport:
    critical_points: list[tuple[float, float]]
    critical_values: list[float]
    dirac_points: list[tuple[float, float]]
    band_min: float
    band_max: float

    @property
    def thresholds(self) -> list[float]:
        vals = sorted({round(v, 12) for v in self.critical_values} | {0.0})
        return sorted({0.0 - v for v in vals} | set(vals))


def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def eval_p_and_critical_points(grid: TorusGrid, seeds: int = 24) -> tuple[np.ndarray, CriticalReport]:
    """``p = |alpha|`` on the grid and the zeros of ``grad p`` off the Dirac set.

    Zeros of ``grad p^2`` are found by Newton/least-squares from a coarse seed
    lattice; those with ``p^2 ~ 0`` are Dirac points, not critical points.
    """
    xi1, xi2 = grid.mesh()
    p = np.abs(eval_alpha(xi1, xi2))

    def F(z):
        return np.array(grad_p_squared(z[0], z[1]))

    def Jac(z):
        a, b = z
        c12 = np.cos(a - b)
        return np.array([[-2 * np.cos(a) - 2 * c12, 2 * c12], [2 * c12, -2 * np.cos(b) - 2 * c12]])

    crit, dirac = [], []
    s = -np.pi + 2 * np.pi * (np.arange(seeds) + 0.5) / seeds
    for a in s:
        for b in s:
            sol = optimize.root(F, [a, b], jac=Jac, method="hybr", tol=1e-14)
            if not sol.success or np.abs(F(sol.x)).max() > 1e-10:
                continue
            z = tuple(float(v) for v in _wrap(sol.x))
            z = tuple(-np.pi if abs(v - np.pi) < 1e-9 or abs(v + np.pi) < 1e-9 else v for v in z)
            z = tuple(0.0 if abs(v) < 1e-12 else v for v in z)
            target = dirac if p_squared(*z) < 1e-12 else crit
            if not any(np.hypot(*_wrap(np.subtract(z, w))) < 1e-7 for w in target):
                target.append(z)
    crit.sort()
    dirac.sort()
    values = [float(np.sqrt(p_squared(*z))) for z in crit]
    return p, CriticalReport(crit, values, dirac, float(p.min()), float(p.max()))


# ---------------------------------------------------------------- functional calculus


def smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def window_function(a: float, b: float, ramp: float = 0.02):
    """Smoothed indicator supported in ``[a, b]``, equal to 1 on ``[a+ramp, b-ramp]``."""
    if not b - a >= 2 * ramp - 1e-12:
        raise ValueError("window narrower than twice its ramp")

    def chi(lam):
        lam = np.asarray(lam, dtype=float)
        return smooth_step((lam - a) / ramp) * smooth_step((b - lam) / ramp)

    chi.support = (a, b)
    chi.ramp = ramp
    return chi


def h0_function(chi, xi1, xi2):
    """``chi(H0(xi))`` by the spectral projections ``(1 +- H0(xi)/p)/2``."""
    a = eval_alpha(xi1, xi2)
    p = np.abs(a)
    safe = np.where(p > 0, p, 1.0)
    cp, cm = chi(p), chi(-p)
    out = np.zeros(np.shape(a) + (2, 2), dtype=complex)
    half_sum, half_diff = 0.5 * (cp + cm), 0.5 * (cp - cm) / safe
    out[..., 0, 0] = half_sum
    out[..., 1, 1] = half_sum
    out[..., 0, 1] = half_diff * np.conj(a)
    out[..., 1, 0] = half_diff * a
    at_zero = p == 0
    if np.any(at_zero):
        out[at_zero] = chi(np.zeros(1))[0] * np.eye(2)
    return out


def hprime_function(bands: Bands, chi, xi1, xi2):
    """``chi(H'_0(xi)) = U' diag(chi(l+), chi(l-)) U'^*``."""
    U = bands.uprime(xi1, xi2)
    lam = bands.lam(xi1, xi2)
    d = np.stack([chi(lam), chi(-lam)], axis=-1)
    return (U * d[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))


def multiplier_projection(symbols: SymbolGrid, chi):
    """Both matrix fields ``chi(H'_0(xi))`` and ``chi(H0(xi))`` on the grid."""
    return (
        hprime_function(symbols.bands, chi, symbols.xi1, symbols.xi2),
        h0_function(chi, symbols.xi1, symbols.xi2),
    )
