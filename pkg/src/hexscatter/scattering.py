"""Isozaki-Kitada phases, the stationary modifier ``J`` and Cook-Kuroda
estimates of (modified) wave operators on zero-padded boxes.

The first-order phase for ``V_l = c <x>^-rho`` is available in closed form:
along the line ``x + s v`` the potential is ``c (w^2 (s+a)^2 + b^2)^(-rho/2)``,
so the ray integral reduces to ``F(y) = int_0^y (1+t^2)^(-rho/2) dt``, a
Gauss hypergeometric function.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma, hyp2f1

from .fourier import _to_torus, torus_size
from .lattice import LatticeBox, PotentialSpec, japanese_bracket
from .propagators import FreeOperator, conjugate_by_Uprime, free_evolve, full_evolve
from .symbols import Bands, EnergyWindow, smooth_step, window_function

log = logging.getLogger(__name__)

__all__ = [
    "OUTGOING",
    "INCOMING",
    "BoundaryContaminationError",
    "WindowMismatchError",
    "phase_correction",
    "region_mask",
    "PhaseTable",
    "build_phase",
    "ModifierOperator",
    "Identity",
    "apply_modifier",
    "fastest_momentum",
    "window_packet",
    "ConvergenceTrace",
    "cook_run",
    "evolve",
    "FactorizationReport",
    "factorization_check",
    "BReport",
    "b_operator_diagnostics",
]

OUTGOING = "outgoing"
INCOMING = "incoming"


class BoundaryContaminationError(RuntimeError):
    """The evolved state reached the edge layer of a zero-padded box."""


class WindowMismatchError(ValueError):
    """State carries spectral weight outside the modifier's energy window."""


# ---------------------------------------------------------------- phases


def _ray_profile(y, rho):
    """``F(y) = int_0^y (1 + t^2)^(-rho/2) dt``."""
    return y * hyp2f1(0.5, rho / 2.0, 1.5, -(y**2))


def _profile_constant(rho):
    """``lim_{Y->inf} F(Y) - Y^(1-rho)/(1-rho)`` (for ``rho > 1`` simply ``F(inf)``)."""
    return np.sqrt(np.pi) * gamma((rho - 1.0) / 2.0) / (2.0 * gamma(rho / 2.0))


def phase_correction(x1, x2, v1, v2, amp: float, rho: float, direction: str = OUTGOING):
    """First-order eikonal correction for ``V_l = amp <x>^-rho`` and velocity ``v``.

    outgoing: ``psi(x, v) = int_0^inf [V(x + s v) - V(s v)] ds``
    incoming: ``psi(x, v) = -int_0^inf [V(x - s v) - V(-s v)] ds``

    Both satisfy ``v . grad_x psi = -V(x)``.
    """
    if direction == INCOMING:
        return -phase_correction(x1, x2, -np.asarray(v1), -np.asarray(v2), amp, rho, OUTGOING)
    if direction != OUTGOING:
        raise ValueError(f"direction must be {OUTGOING!r} or {INCOMING!r}, got {direction!r}")
    x1, x2, v1, v2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x1, x2, v1, v2)))
    if amp == 0:
        return np.zeros(x1.shape)
    w = np.hypot(v1, v2)
    xv = x1 * v1 + x2 * v2
    b = np.sqrt(np.maximum(1.0 + x1**2 + x2**2 - xv**2 / w**2, 1.0))
    y = xv / (w * b)
    if abs(rho - 1.0) < 1e-12:
        return (amp / w) * (-np.log(b) - np.arcsinh(y))
    bp = b ** (1.0 - rho)
    return (amp / w) * (_profile_constant(rho) * (bp - 1.0) - bp * _ray_profile(y, rho))


def _cos_angle(x1, x2, v1, v2):
    r = np.hypot(x1, x2) * np.hypot(v1, v2)
    return np.where(r > 0, (x1 * v1 + x2 * v2) / np.where(r > 0, r, 1.0), 1.0)


def region_mask(x1, x2, v1, v2, direction=OUTGOING, cos_min=-0.5, r0=8.0):
    """Indicator of ``cos(x, +-v) >= cos_min`` and ``|x| >= r0``."""
    s = 1.0 if direction == OUTGOING else -1.0
    return (_cos_angle(x1, x2, s * v1, s * v2) >= cos_min) & (np.hypot(x1, x2) >= r0)


def smooth_region_mask(x1, x2, v1, v2, direction=OUTGOING, cos_min=-0.5, r0=8.0, ramp=0.5):
    """Smooth cutoff equal to 1 on :func:`region_mask`, vanishing for
    ``cos <= cos_min - ramp`` or ``|x| <= r0/2``."""
    s = 1.0 if direction == OUTGOING else -1.0
    c = _cos_angle(x1, x2, s * v1, s * v2)
    ang = smooth_step((c - (cos_min - ramp)) / ramp)
    rad = smooth_step((np.hypot(x1, x2) - r0 / 2) / (r0 / 2))
    return ang * rad


@dataclass
class PhaseTable:
    """Sampled phase correction ``psi`` and eikonal residual for one band.

    ``psi[i, k]`` and ``residual[i, k]`` refer to ``points[i]`` and ``xis[k]``;
    the points lie on ``n_dirs`` rays at the radii ``radii``.
    """

    band: int
    direction: str
    points: np.ndarray
    xis: np.ndarray
    psi: np.ndarray
    mask: np.ndarray
    residual: np.ndarray
    radii: np.ndarray
    sup_residual: np.ndarray
    decay_exponent: float
    eps_r: float = 0.05

    @property
    def passed(self) -> bool:
        return bool(self.decay_exponent <= -(1.0 + self.eps_r))

    def summary(self) -> dict:
        return {
            "band": self.band,
            "direction": self.direction,
            "n_points": int(len(self.points)),
            "n_momenta": int(len(self.xis)),
            "decay_exponent": self.decay_exponent,
            "threshold": -(1.0 + self.eps_r),
            "max_abs_psi": float(np.abs(self.psi).max()) if self.psi.size else 0.0,
            "passed": self.passed,
        }


def _fit_decay(radii, sup):
    good = sup > 0
    if good.sum() < 3:
        return -np.inf
    slope, _ = np.polyfit(np.log(np.sqrt(1 + radii[good] ** 2)), np.log(sup[good]), 1)
    return float(slope)


def build_phase(
    spec: PotentialSpec,
    window: EnergyWindow,
    bands: Bands,
    band: int = 1,
    direction: str = OUTGOING,
    N: int = 48,
    n_dirs: int = 16,
    radii: Sequence[float] | None = None,
    cos_min: float = -0.5,
    r0: float = 8.0,
    h: float = 1e-3,
    eps_r: float = 0.05,
) -> PhaseTable:
    """Tabulate ``psi`` on rays times the in-window torus grid and fit the
    decay of ``sup |r|`` over the region mask."""
    if band not in (1, -1):
        raise ValueError("band must be +1 or -1")
    if spec.amp_long != 0 and spec.rho <= 0.5:
        raise ValueError(f"first-order phase needs rho > 1/2, got rho = {spec.rho}")
    radii = np.geomspace(r0, 256 * r0, 25) if radii is None else np.asarray(radii, dtype=float)

    ax = 2 * np.pi * np.arange(N) / N - np.pi
    k1, k2 = (g.ravel() for g in np.meshgrid(ax, ax, indexing="ij"))
    lam = band * bands.lam(k1, k2)
    inw = window.contains(lam)
    k1, k2, lam = k1[inw], k2[inw], lam[inw]
    g1, g2 = bands.grad_lam(k1, k2)
    g1, g2 = band * g1, band * g2
    speed = np.hypot(g1, g2)
    if speed.size and not speed.min() > 0:
        raise ValueError("group velocity vanishes inside the window; it must avoid critical values")

    th = 2 * np.pi * np.arange(n_dirs) / n_dirs
    R, T = np.meshgrid(radii, th, indexing="ij")
    p1, p2 = (R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()
    P1, P2 = p1[:, None], p2[:, None]
    V1, V2 = g1[None, :], g2[None, :]

    def psi_at(a1, a2):
        return phase_correction(a1, a2, V1, V2, spec.amp_long, spec.rho, direction)

    psi = psi_at(P1, P2)
    d1 = (psi_at(P1 + h, P2) - psi_at(P1 - h, P2)) / (2 * h)
    d2 = (psi_at(P1, P2 + h) - psi_at(P1, P2 - h)) / (2 * h)
    lam_shift = band * bands.lam(k1[None, :] + d1, k2[None, :] + d2)
    Vl = spec.amp_long * japanese_bracket(P1, P2, -spec.rho)
    resid = lam_shift + Vl - lam[None, :]
    mask = region_mask(P1, P2, V1, V2, direction, cos_min, r0)

    ring = np.repeat(np.arange(len(radii)), n_dirs)
    sup = np.array([np.abs(resid[ring == i][mask[ring == i]]).max(initial=0.0) for i in range(len(radii))])
    expo = _fit_decay(radii, sup)
    return PhaseTable(
        band, direction, np.stack([p1, p2], axis=1), np.stack([k1, k2], axis=1), psi, mask, resid,
        radii, sup, expo, eps_r,
    )


# ---------------------------------------------------------------- modifier


class Identity:
    """Stand-in for ``J`` in unmodified runs."""

    trivial = True

    def apply(self, u, box, check=True):
        return u.copy()

    def __call__(self, u, box, check=True):
        return self.apply(u, box)


def _cheb_nodes(lo, hi, n):
    t = np.cos(np.pi * (np.arange(n) + 0.5) / n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


def _lagrange_basis(nodes, pts):
    """``L[i, k] = l_i(pts[k])`` by the barycentric formula for first-kind nodes."""
    n = len(nodes)
    wts = (-1.0) ** np.arange(n) * np.sin(np.pi * (np.arange(n) + 0.5) / n)
    diff = pts[None, :] - nodes[:, None]
    exact = diff == 0
    diff[exact] = 1.0
    q = wts[:, None] / diff
    L = q / q.sum(axis=0, keepdims=True)
    hit = exact.any(axis=0)
    L[:, hit] = exact[:, hit].astype(float)
    return L


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


@dataclass
class _Chart:
    center: tuple[float, float]
    lo: tuple[float, float]
    hi: tuple[float, float]
    n: int


@dataclass
class ModifierOperator:
    """``J = U' diag(J~_+, J~_-) U'^*`` with
    ``J~_# w[x] = (2 pi)^-1 int e^{i x.xi + i Theta_#(x, xi)} Fw(xi) dxi``.

    ``Theta_# = m_# psi_#`` on the in-window momenta of band ``#`` (``m_#`` is
    the smooth region cutoff) and ``0`` elsewhere, so momenta outside the
    window pass through unchanged.

    ``method='dense'`` sums over all in-window momenta for every site.
    ``method='separable'`` interpolates ``e^{i Theta(x, .)}`` by a tensor
    Chebyshev polynomial on the momentum box that carries the state, which
    turns the sum into a few FFTs; the interpolation error is measured on
    random (site, momentum) pairs and the degree raised until it is below
    ``interp_tol``.
    """

    spec: PotentialSpec
    window: EnergyWindow
    bands: Bands
    direction: str = OUTGOING
    cos_min: float = -0.5
    r0: float = 8.0
    mask_ramp: float = 0.5
    method: str = "auto"
    interp_tol: float = 1e-6
    support_tol: float = 1e-5
    mismatch_tol: float = 1e-4
    trivial: bool = field(init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _frozen: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.spec.amp_long != 0 and self.spec.rho <= 0.5:
            raise ValueError(f"first-order phase needs rho > 1/2, got rho = {self.spec.rho}")
        if self.method not in ("auto", "dense", "separable"):
            raise ValueError(f"unknown method {self.method!r}")
        self.trivial = self.spec.amp_long == 0

    # phase ------------------------------------------------------------
    def theta(self, band: int, x1, x2, xi1, xi2):
        g1, g2 = self.bands.grad_lam(xi1, xi2)
        v1, v2 = band * g1, band * g2
        psi = phase_correction(x1, x2, v1, v2, self.spec.amp_long, self.spec.rho, self.direction)
        return smooth_region_mask(x1, x2, v1, v2, self.direction, self.cos_min, self.r0, self.mask_ramp) * psi

    def table(self, band: int = 1, **kw) -> PhaseTable:
        return build_phase(self.spec, self.window, self.bands, band, self.direction, cos_min=self.cos_min, r0=self.r0, **kw)

    # application ------------------------------------------------------
    def prepare(self, u: np.ndarray, box: LatticeBox) -> None:
        """Fix the interpolation charts from ``u`` so that later applications
        (e.g. to free evolutions of ``u``) use one and the same operator."""
        self._frozen.clear()
        if self.trivial:
            return
        M = torus_size(box)
        F = self.bands.fft_fields(M)
        w = conjugate_by_Uprime(u, box, self.bands, adjoint=True)
        for c, band in ((0, 1), (1, -1)):
            wh = sfft.fft2(_to_torus(w[c], M))
            amp = np.abs(wh) * self.window.contains(band * F.lam)
            if amp.max() > 0:
                self._frozen[(box.L, box.mode, band)] = self._chart(amp, F, band, box)

    def release(self) -> None:
        self._frozen.clear()
        self._cache.clear()

    def check_window(self, u, box) -> float:
        """Relative weight of ``u`` outside the window (both bands)."""
        M = torus_size(box)
        F = self.bands.fft_fields(M)
        w = conjugate_by_Uprime(u, box, self.bands, adjoint=True)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        out = 0.0
        for c, band in ((0, 1), (1, -1)):
            wh = sfft.fft2(_to_torus(w[c], M)) / M
            out += float(np.sum(np.abs(wh[~self.window.contains(band * F.lam)]) ** 2))
        return float(np.sqrt(out) / nrm)

    def apply(self, u: np.ndarray, box: LatticeBox, check: bool = True) -> np.ndarray:
        if u.shape != box.shape:
            raise ValueError(f"state shape {u.shape} does not match box {box.shape}")
        if check:
            leak = self.check_window(u, box)
            if leak > self.mismatch_tol:
                raise WindowMismatchError(
                    f"state has relative weight {leak:.2e} outside the window "
                    f"({self.window.a}, {self.window.b}); apply chi(H0) first"
                )
        if self.trivial:
            return u.copy()
        w = conjugate_by_Uprime(u, box, self.bands, adjoint=True)
        w = np.stack([self.apply_tilde(w[0], box, 1), self.apply_tilde(w[1], box, -1)])
        return conjugate_by_Uprime(w, box, self.bands)

    __call__ = apply

    def apply_tilde(self, w: np.ndarray, box: LatticeBox, band: int = 1, method: str | None = None) -> np.ndarray:
        """``J~_band`` on one scalar component."""
        if self.trivial:
            return w.copy()
        method = method or self.method
        M = torus_size(box)
        F = self.bands.fft_fields(M)
        wh = sfft.fft2(_to_torus(w, M))
        inw = self.window.contains(band * F.lam)
        amp = np.abs(wh) * inw
        if amp.max() == 0:
            return w.copy()
        if method in ("auto", "separable"):
            key = (box.L, box.mode, band)
            chart = self._frozen[key] if key in self._frozen else self._chart(amp, F, band, box)
            if chart is not None:
                return self._apply_separable(wh, inw, chart, box, band)
            if method == "separable":
                raise RuntimeError("no separable chart fits this state's momentum support")
        return self._apply_dense(wh, inw, box, band)

    def _apply_dense(self, wh, inw, box, band, budget=4_000_000):
        M = torus_size(box)
        n = box.side
        F = self.bands.fft_fields(M)
        rest = np.where(inw, 0.0, wh)
        out = sfft.ifft2(rest)[:n, :n].ravel()
        ks = np.flatnonzero(inw)
        xi1, xi2 = F.xi1.ravel()[ks], F.xi2.ravel()[ks]
        c = wh.ravel()[ks] / M**2
        m1, m2 = (g.ravel() for g in np.meshgrid(np.arange(n), np.arange(n), indexing="ij"))
        x1, x2 = m1 - box.L, m2 - box.L
        rows = max(1, budget // max(1, len(ks)))
        for s in range(0, x1.size, rows):
            r = slice(s, s + rows)
            ph = m1[r, None] * xi1[None, :] + m2[r, None] * xi2[None, :]
            th = self.theta(band, x1[r, None], x2[r, None], xi1[None, :], xi2[None, :])
            out[r] += np.exp(1j * (ph + th)) @ c
        return out.reshape(n, n)

    def _chart(self, amp, F, band, box):
        # smallest set holding all but support_tol^2 of the in-window weight
        a2 = np.sort((amp**2).ravel())
        cut = np.searchsorted(np.cumsum(a2), self.support_tol**2 * a2.sum())
        sig = amp**2 >= a2[min(cut, a2.size - 1)]
        k = np.argmax(amp)
        q = 0.05
        c1 = np.round(F.xi1.ravel()[k] / q) * q
        c2 = np.round(F.xi2.ravel()[k] / q) * q
        d1 = _wrap(F.xi1[sig] - c1)
        d2 = _wrap(F.xi2[sig] - c2)
        step = 2 * np.pi / F.M
        lo = (np.floor((d1.min() - step) / q) * q, np.floor((d2.min() - step) / q) * q)
        hi = (np.ceil((d1.max() + step) / q) * q, np.ceil((d2.max() + step) / q) * q)
        if max(hi[0] - lo[0], hi[1] - lo[1]) > 1.5 * np.pi:
            return None
        # nodes must stay away from critical points of the band
        for n in (8, 12, 16, 20, 24, 32, 40):
            chart = _Chart((c1, c2), lo, hi, n)
            t1 = c1 + _cheb_nodes(lo[0], hi[0], n)
            t2 = c2 + _cheb_nodes(lo[1], hi[1], n)
            g1, g2 = self.bands.grad_lam(*np.meshgrid(t1, t2, indexing="ij"))
            if np.hypot(g1, g2).min() < 0.05:
                return None
            if self._interp_error(chart, F, sig, band, box) <= self.interp_tol:
                return chart
        log.warning("separable modifier did not reach %.1e; falling back to the dense sum", self.interp_tol)
        return None

    def _interp_error(self, chart, F, sig, band, box, n_x=256, n_k=256) -> float:
        rng = np.random.default_rng(12345)
        ks = np.flatnonzero(sig)
        ks = rng.choice(ks, size=min(n_k, ks.size), replace=False)
        x1, x2 = box.coords
        xs = rng.choice(x1.size, size=min(n_x, x1.size), replace=False)
        # always include the far corners, where the phase is largest
        X1 = np.concatenate([x1.ravel()[xs], [-box.L, -box.L, box.L - 1, box.L - 1]])
        X2 = np.concatenate([x2.ravel()[xs], [-box.L, box.L - 1, -box.L, box.L - 1]])
        k1, k2 = F.xi1.ravel()[ks], F.xi2.ravel()[ks]
        exact = np.exp(1j * self.theta(band, X1[:, None], X2[:, None], k1[None, :], k2[None, :]))
        t1 = _cheb_nodes(chart.lo[0], chart.hi[0], chart.n)
        t2 = _cheb_nodes(chart.lo[1], chart.hi[1], chart.n)
        L1 = _lagrange_basis(t1, _wrap(k1 - chart.center[0]))
        L2 = _lagrange_basis(t2, _wrap(k2 - chart.center[1]))
        T1, T2 = np.meshgrid(chart.center[0] + t1, chart.center[1] + t2, indexing="ij")
        E = np.exp(1j * self.theta(band, X1[:, None, None], X2[:, None, None], T1[None], T2[None]))
        approx = np.einsum("xij,ik,jk->xk", E, L1, L2)
        return float(np.abs(approx - exact).max())

    def _node_phases(self, chart, box, band):
        key = (box.L, box.mode, band, chart.center, chart.lo, chart.hi, chart.n)
        if key in self._cache:
            return self._cache[key]
        self._cache.clear()
        x1, x2 = box.coords
        t1 = chart.center[0] + _cheb_nodes(chart.lo[0], chart.hi[0], chart.n)
        t2 = chart.center[1] + _cheb_nodes(chart.lo[1], chart.hi[1], chart.n)
        E = np.empty((chart.n, chart.n) + x1.shape, dtype=complex)
        for i in range(chart.n):
            for j in range(chart.n):
                E[i, j] = np.exp(1j * self.theta(band, x1, x2, t1[i], t2[j]))
        self._cache[key] = E
        return E

    def _apply_separable(self, wh, inw, chart, box, band):
        M = torus_size(box)
        n = box.side
        F = self.bands.fft_fields(M)
        d1 = _wrap(F.xi1[:, 0] - chart.center[0])
        d2 = _wrap(F.xi2[0, :] - chart.center[1])
        in1 = (d1 >= chart.lo[0]) & (d1 <= chart.hi[0])
        in2 = (d2 >= chart.lo[1]) & (d2 <= chart.hi[1])
        inside = inw & in1[:, None] & in2[None, :]
        rest = np.where(inside, 0.0, wh)
        out = sfft.ifft2(rest)[:n, :n]
        win = np.where(inside, wh, 0.0)
        t1 = _cheb_nodes(chart.lo[0], chart.hi[0], chart.n)
        t2 = _cheb_nodes(chart.lo[1], chart.hi[1], chart.n)
        L1 = np.zeros((chart.n, M))
        L2 = np.zeros((chart.n, M))
        L1[:, in1] = _lagrange_basis(t1, d1[in1])
        L2[:, in2] = _lagrange_basis(t2, d2[in2])
        E = self._node_phases(chart, box, band)
        for i in range(chart.n):
            part = L1[i][:, None] * win
            for j in range(chart.n):
                out += E[i, j] * sfft.ifft2(part * L2[j][None, :])[:n, :n]
        return out


def apply_modifier(u: np.ndarray, J, box: LatticeBox) -> np.ndarray:
    return J.apply(u, box)


# ---------------------------------------------------------------- packets


def fastest_momentum(bands: Bands, energy: float, band: int = 1, N: int = 2048):
    """Momentum on the ``lambda_band = energy`` shell with the largest group velocity."""
    ax = 2 * np.pi * np.arange(N) / N - np.pi
    k1, k2 = np.meshgrid(ax, ax, indexing="ij")
    lam = band * bands.lam(k1, k2)
    g1, g2 = bands.grad_lam(k1, k2)
    near = np.abs(lam - energy) < 4 * np.pi / N * np.hypot(g1, g2)
    sp = np.where(near, np.hypot(g1, g2), -1.0)
    i = np.argmax(sp)
    xi = np.array([k1.ravel()[i], k2.ravel()[i]])
    for _ in range(20):
        g = band * np.array(bands.grad_lam(*xi))
        xi = xi - (band * bands.lam(*xi) - energy) * g / (g @ g)
    return xi


def window_packet(
    box: LatticeBox,
    bands: Bands,
    window: EnergyWindow,
    xi0,
    sigma: float = 8.0,
    center=(0.0, 0.0),
    ramp: float = 0.02,
    band: int = 1,
) -> np.ndarray:
    """Normalized Gaussian packet on band ``band``, projected by ``chi(H0)``."""
    x1, x2 = box.coords
    g = np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / (2 * sigma**2))
    g = g * np.exp(1j * (xi0[0] * x1 + xi0[1] * x2))
    w = np.stack([g, np.zeros_like(g)] if band == 1 else [np.zeros_like(g), g])
    u = conjugate_by_Uprime(w, box, bands)
    H0 = FreeOperator(box, bands, "H0")
    chi = window_function(window.a, window.b, ramp)
    from .fourier import apply_multiplier

    u = apply_multiplier(u, box, H0.function_symbol(chi))
    return u / np.linalg.norm(u)


# ---------------------------------------------------------------- Cook-Kuroda


def evolve(op, u, t, eps=1e-12):
    """``exp(-i t S) u``; free multipliers are exponentiated exactly."""
    if isinstance(op, FreeOperator):
        return free_evolve(u, t, op)
    return full_evolve(u, t, op, eps=eps)


@dataclass
class ConvergenceTrace:
    """Samples of ``W(t) u = e^{itS} J e^{-itS0} u`` at geometric times."""

    times: list[float]
    cook_norms: list[float]
    cauchy: list[float]
    intertwine: list[float]
    isometry: list[float]
    fd_derivative: list[float]
    boundary_mass: list[float]
    tol: float = 1e-3
    states: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("time grid must be strictly increasing")

    @property
    def finite(self) -> bool:
        vals = self.cook_norms + self.cauchy + self.isometry
        vals += [v for v in self.intertwine + self.fd_derivative if not np.isnan(v)]
        return all(np.isfinite(v) for v in vals)

    @property
    def converged(self) -> bool:
        below = [c < self.tol for c in self.cauchy]
        return any(all(below[i : i + 3]) for i in range(len(below) - 2))

    @property
    def fd_error(self) -> float:
        errs = [abs(a - b) for a, b in zip(self.fd_derivative, self.cook_norms) if not np.isnan(a)]
        return max(errs, default=0.0)

    def decreasing_after(self, t: float, which: str = "intertwine") -> bool:
        """Strict decrease of a recorded series over samples with time ``> t``."""
        if which == "cauchy":
            ts, vals = self.times[1:], self.cauchy
        else:
            ts, vals = self.times, getattr(self, which)
        tail = [v for tk, v in zip(ts, vals) if tk > t]
        return len(tail) >= 2 and all(b < a for a, b in zip(tail, tail[1:]))

    def tail(self, k: int = 1) -> float:
        return float(sum(self.cauchy[-k:]))

    def rows(self):
        for i, t in enumerate(self.times):
            yield {
                "t": t,
                "cook_norm": self.cook_norms[i],
                "cauchy": self.cauchy[i - 1] if i > 0 else "",
                "intertwine": self.intertwine[i],
                "isometry": self.isometry[i],
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=["t", "cook_norm", "cauchy", "intertwine", "isometry"])
            wr.writeheader()
            for r in self.rows():
                wr.writerow({k: (repr(float(v)) if v != "" else "") for k, v in r.items()})

    def summary(self) -> dict:
        return {
            "times": self.times,
            "final_cauchy": self.cauchy[-1] if self.cauchy else None,
            "final_isometry": self.isometry[-1],
            "converged": self.converged,
            "finite": self.finite,
            "fd_error": self.fd_error,
            "max_boundary_mass": max(self.boundary_mass),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def cook_run(
    u: np.ndarray,
    S,
    S0,
    J=None,
    t0: float = 2.0,
    n_times: int = 13,
    s: float = 1.0,
    eps: float = 1e-12,
    boundary_layer: int = 10,
    boundary_tol: float = 1e-10,
    fd_h: float = 1e-4,
    fd_every: int = 1,
    intertwine: bool = True,
    tol: float = 1e-3,
    keep_states: bool = False,
) -> ConvergenceTrace:
    """Estimate ``W(t) u`` along ``t_k = t0 2^(k/2)``.

    ``S`` and ``S0`` are operators on the same box (``S0`` free); ``J`` is a
    :class:`ModifierOperator` or ``None`` for the identity.  Aborts with
    :class:`BoundaryContaminationError` once ``S0``-evolved or pulled-back
    states put more than ``boundary_tol`` of their mass in the edge layer.
    """
    box = S.box
    J = Identity() if J is None else J
    if hasattr(J, "prepare"):
        J.prepare(u, box)
    times = [t0 * 2 ** (k / 2) for k in range(n_times)]
    nrm = np.linalg.norm(u)
    trace = dict(cook=[], cauchy=[], inter=[], iso=[], fd=[], bm=[])
    states = []
    prev = None

    def guard(v, t, what):
        m = box.boundary_mass(v, boundary_layer) / nrm**2 if not box.periodic else 0.0
        if m > boundary_tol:
            raise BoundaryContaminationError(
                f"{what} at t={t:g} has relative mass {m:.2e} within {boundary_layer} sites of the edge "
                f"(tolerance {boundary_tol:.0e}); enlarge the box or shorten the run"
            )
        return m

    def W(t):
        v = evolve(S0, u, t, eps)
        bm = guard(v, t, "free state")
        Jv = J.apply(v, box)
        return evolve(S, Jv, -t, eps), v, Jv, bm

    for k, t in enumerate(times):
        Wt, v, Jv, bm = W(t)
        bm = max(bm, guard(Wt, t, "pulled-back state"))
        cook = np.linalg.norm(S.apply(Jv) - J.apply(S0.apply(v), box, check=False))
        trace["cook"].append(float(cook))
        trace["iso"].append(float(np.linalg.norm(Wt) / nrm))
        trace["bm"].append(float(bm))
        if prev is not None:
            trace["cauchy"].append(float(np.linalg.norm(Wt - prev)))
        if intertwine:
            lhs = evolve(S, Wt, -s, eps)
            us = evolve(S0, u, -s, eps)
            vs = evolve(S0, us, t, eps)
            rhs = evolve(S, J.apply(vs, box), -t, eps)
            trace["inter"].append(float(np.linalg.norm(lhs - rhs)))
        else:
            trace["inter"].append(float("nan"))
        if fd_every and k % fd_every == 0:
            plus = evolve(S, J.apply(evolve(S0, u, t + fd_h, eps), box), -(t + fd_h), eps)
            minus = evolve(S, J.apply(evolve(S0, u, t - fd_h, eps), box), -(t - fd_h), eps)
            trace["fd"].append(float(np.linalg.norm(plus - minus) / (2 * fd_h)))
        else:
            trace["fd"].append(float("nan"))
        log.info("cook t=%.3f cook=%.3e cauchy=%s", t, cook, trace["cauchy"][-1] if trace["cauchy"] else "-")
        prev = Wt
        if keep_states:
            states.append(Wt)
    return ConvergenceTrace(
        times, trace["cook"], trace["cauchy"], trace["inter"], trace["iso"], trace["fd"], trace["bm"], tol,
        states if keep_states else None,
    )


# ---------------------------------------------------------------- two-stage factorization


@dataclass
class FactorizationReport:
    """Direct ``W(T) u`` against the two-stage composition through ``H'_l``."""

    T: float
    T_inner: float
    difference: float
    tails: dict[str, float]
    factor: float = 3.0
    traces: dict[str, ConvergenceTrace] = field(default_factory=dict, repr=False)

    @property
    def bound(self) -> float:
        return self.factor * sum(self.tails.values())

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.difference) and self.difference <= self.bound)

    def summary(self) -> dict:
        return {
            "T": self.T, "T_inner": self.T_inner, "difference": self.difference,
            "tails": self.tails, "bound": self.bound, "passed": self.passed,
        }


def factorization_check(u, H, H0, Hl, Hl0, J, n_times: int = 11, t0: float = 2.0, eps: float = 1e-12,
                        factor: float = 3.0, **kw) -> FactorizationReport:
    """Compare ``W(T) u`` with ``W_3(T) W_2(T') u``.

    ``W(t) = e^{itH} J e^{-itH0}``, ``W_2(t) = e^{itH'_l} J e^{-itH'_0}`` and
    ``W_3(t) = e^{itH} e^{-itH'_l}``; ``T'`` is the sample before ``T``.  Each
    stage contributes its last Cauchy difference to the tolerance.
    """
    kw.setdefault("fd_every", 0)
    kw.setdefault("intertwine", False)
    direct = cook_run(u, H, H0, J, t0=t0, n_times=n_times, eps=eps, keep_states=True, **kw)
    step2 = cook_run(u, Hl, Hl0, J, t0=t0, n_times=n_times - 1, eps=eps, keep_states=True, **kw)
    v = step2.states[-1]
    step3 = cook_run(v, H, Hl, None, t0=t0, n_times=n_times, eps=eps, keep_states=True, **kw)
    diff = float(np.linalg.norm(step3.states[-1] - direct.states[-1]))
    tails = {"direct": direct.tail(), "step2": step2.tail(), "step3": step3.tail()}
    for tr in (direct, step2, step3):
        tr.states = None
    return FactorizationReport(direct.times[-1], step2.times[-1], diff, tails, factor,
                               {"direct": direct, "step2": step2, "step3": step3})


# ---------------------------------------------------------------- boundedness diagnostics


@dataclass
class BReport:
    """Power-method norms of the two weighted operators per box size."""

    ladder: list[int]
    gamma: float
    b1: list[float]
    b2: list[float]
    growth_tol: float = 1.05

    @staticmethod
    def _ratios(v):
        return [b / a if a > 0 else (1.0 if b == 0 else np.inf) for a, b in zip(v, v[1:])]

    def stable(self, which: str) -> bool:
        return all(r <= self.growth_tol for r in self._ratios(getattr(self, which)))

    @property
    def passed(self) -> bool:
        return self.stable("b1") and self.stable("b2")

    def summary(self) -> dict:
        return {
            "ladder": self.ladder, "gamma": self.gamma, "b1": self.b1, "b2": self.b2,
            "b1_ratios": self._ratios(self.b1), "b2_ratios": self._ratios(self.b2), "passed": self.passed,
        }


def b_operator_diagnostics(window: EnergyWindow, spec: PotentialSpec, bands: Bands, gamma: float | None = None,
                           ladder: Sequence[int] = (16, 32, 64), ramp: float = 0.8, tol: float = 1e-6,
                           seed: int = 0, growth_tol: float = 1.05) -> BReport:
    """``<x>^-g chi(H'_0) <x>^g`` and ``<x>^g [V_l, chi(H'_0) U'^*] U' <x>^g`` on zero-padded boxes.

    ``g`` defaults to ``(1 + rho) / 2``.
    """
    from .fourier import apply_multiplier
    from .lattice import realize_potential
    from .pdo import power_norm

    g = (1.0 + spec.rho) / 2 if gamma is None else gamma
    chi = window_function(window.a, window.b, ramp)
    b1, b2 = [], []
    for L in ladder:
        box = LatticeBox(L, "zero-padded")
        F = bands.fft_fields(torus_size(box))
        cs = FreeOperator(box, bands, "H'0").function_symbol(chi)
        U = F.U
        Ua = np.conj(np.swapaxes(U, -1, -2))
        X = box.bracket(g)
        Vl = realize_potential(spec, box).V_long

        def ch(w):
            return apply_multiplier(w, box, cs)

        def mu(w, m):
            return apply_multiplier(w, box, m)

        B1 = lambda w: ch(X * w) / X  # noqa: E731
        B1t = lambda w: X * ch(w / X)  # noqa: E731
        b1.append(power_norm(B1, B1t, box.shape, np.random.default_rng(seed), tol))
        if not np.any(Vl):
            b2.append(0.0)
            continue

        def B2(w):
            v = mu(X * w, U)
            return X * (Vl * ch(mu(v, Ua)) - ch(mu(Vl * v, Ua)))

        def B2t(w):
            y = X * w
            return X * mu(mu(ch(Vl * y), U) - Vl * mu(ch(y), U), Ua)

        b2.append(power_norm(B2, B2t, box.shape, np.random.default_rng(seed), tol))
        log.info("B diagnostics L=%d B1=%.4g B2=%.4g", L, b1[-1], b2[-1])
    return BReport(list(ladder), g, b1, b2, growth_tol)
