"""Hexagonal-lattice geometry, states and potentials.

A state is a ``(2, n, n)`` complex array: component ``j`` holds the values of
``u_j`` on the sublattice ``Z^2 x {j}``.  Array index ``(i1, i2)`` corresponds
to the site ``x = (i1 - L, i2 - L)`` so that the origin sits at index ``(L, L)``
and the box covers ``-L <= x_k < L``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "BoundaryMode",
    "LatticeBox",
    "StateVector",
    "PotentialSpec",
    "Potential",
    "japanese_bracket",
    "apply_H0",
    "apply_H",
    "realize_potential",
    "discrete_derivative",
    "assumption_scan",
    "H_sparse",
]


class BoundaryMode(str, Enum):
    ZERO = "zero-padded"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeBox:
    """Finite window ``{-L <= x_k < L}`` of ``Z^2``.

    The side is ``2L`` (even) so that the box is exactly the period cell of the
    ``N = 2L`` torus grid used by the Fourier transform.
    """

    L: int
    mode: BoundaryMode = BoundaryMode.PERIODIC

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"half width L must be an integer >= 2, got {self.L}")
        object.__setattr__(self, "mode", BoundaryMode(self.mode))

    @property
    def side(self) -> int:
        return 2 * self.L

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.side, self.side)

    @property
    def periodic(self) -> bool:
        return self.mode is BoundaryMode.PERIODIC

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.arange(self.side) - self.L
        x1, x2 = np.meshgrid(r, r, indexing="ij")
        return x1, x2

    def bracket(self, s: float = 1.0) -> np.ndarray:
        """``<x>^s`` sampled on the box, shape ``(n, n)``."""
        x1, x2 = self.coords
        return japanese_bracket(x1, x2, s)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)

    def delta(self, site=(0, 0), component: int = 0) -> np.ndarray:
        u = self.zeros()
        u[component, site[0] + self.L, site[1] + self.L] = 1.0
        return u

    def random_state(self, rng: np.random.Generator, interior: int | None = None) -> np.ndarray:
        """Gaussian random state, optionally supported in ``|x_k| < interior``."""
        u = rng.standard_normal(self.shape) + 1j * rng.standard_normal(self.shape)
        if interior is not None:
            x1, x2 = self.coords
            u *= (np.abs(x1) < interior) & (np.abs(x2) < interior)
        return u

    def boundary_mass(self, u: np.ndarray, layer: int) -> float:
        """Squared norm of ``u`` within ``layer`` sites of the box edge."""
        x1, x2 = self.coords
        inner = (x1 >= -self.L + layer) & (x1 < self.L - layer) & (x2 >= -self.L + layer) & (x2 < self.L - layer)
        return float(np.sum(np.abs(u[:, ~inner]) ** 2))


def japanese_bracket(x1, x2, s: float = 1.0):
    return (1.0 + np.asarray(x1, dtype=float) ** 2 + np.asarray(x2, dtype=float) ** 2) ** (s / 2.0)


@dataclass
class StateVector:
    """A state together with the box it lives on; serializable to bytes."""

    box: LatticeBox
    values: np.ndarray

    MAGIC = b"HXSV"
    _HEADER = struct.Struct("<4sIIB")  # magic, version, L, periodic flag

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.box.shape:
            raise ValueError(f"state shape {self.values.shape} does not match box {self.box.shape}")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2)))

    def to_bytes(self) -> bytes:
        # interleave (u1[x], u2[x]) per site, each as (re, im) little-endian float64
        pairs = np.moveaxis(self.values, 0, -1).astype("<c16")
        head = self._HEADER.pack(self.MAGIC, 1, self.box.L, int(self.box.periodic))
        return head + pairs.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "StateVector":
        magic, version, L, periodic = cls._HEADER.unpack_from(blob)
        if magic != cls.MAGIC or version != 1:
            raise ValueError("not a state-vector blob")
        box = LatticeBox(L, BoundaryMode.PERIODIC if periodic else BoundaryMode.ZERO)
        pairs = np.frombuffer(blob, dtype="<c16", offset=cls._HEADER.size)
        return cls(box, np.moveaxis(pairs.reshape(box.side, box.side, 2), -1, 0).copy())


def _shift(a: np.ndarray, d1: int, d2: int, periodic: bool) -> np.ndarray:
    """Return ``b`` with ``b[x] = a[x + (d1, d2)]``, zero outside when not periodic."""
    if periodic:
        return np.roll(a, (-d1, -d2), axis=(-2, -1))
    b = np.zeros_like(a)
    n1, n2 = a.shape[-2:]
    src1 = slice(max(d1, 0), n1 + min(d1, 0))
    dst1 = slice(max(-d1, 0), n1 + min(-d1, 0))
    src2 = slice(max(d2, 0), n2 + min(d2, 0))
    dst2 = slice(max(-d2, 0), n2 + min(-d2, 0))
    b[..., dst1, dst2] = a[..., src1, src2]
    return b


def apply_H0(u: np.ndarray, box: LatticeBox) -> np.ndarray:
    """Free graphene Hamiltonian (negative hexagonal difference Laplacian)."""
    per = box.periodic
    u1, u2 = u[0], u[1]
    v = np.empty_like(u)
    v[0] = -(u2 + _shift(u2, -1, 0, per) + _shift(u2, 0, -1, per))
    v[1] = -(u1 + _shift(u1, 1, 0, per) + _shift(u1, 0, 1, per))
    return v


def H_sparse(box: LatticeBox, V: "Potential | None" = None):
    """CSR matrix of ``H0 + V`` on the box (component-major flattening)."""
    import scipy.sparse as sp

    n = box.side
    idx = np.arange(n * n).reshape(n, n)
    i1, i2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows, cols = [], []
    for d1, d2 in ((0, 0), (-1, 0), (0, -1)):
        # (H0 u)_1[x] collects -u_2[x + d]; the transpose gives the u_1 -> v_2 block
        j1, j2 = i1 + d1, i2 + d2
        if box.periodic:
            j1, j2 = j1 % n, j2 % n
            ok = np.ones_like(j1, dtype=bool)
        else:
            ok = (j1 >= 0) & (j1 < n) & (j2 >= 0) & (j2 < n)
        rows.append(idx[ok])
        cols.append(n * n + idx[j1[ok], j2[ok]])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    data = -np.ones(r.size)
    H = sp.coo_matrix((data, (r, c)), shape=(2 * n * n, 2 * n * n))
    H = (H + H.T).tocsr()
    if V is not None:
        H = H + sp.diags(np.concatenate([V.V1.ravel(), V.V2.ravel()]))
    return H.tocsr()


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True)
class PotentialSpec:
    """``V_l = amp_long <x>^-rho`` and ``V_{s,j} = +/- amp_short <x>^(-1-rho)``.

    ``short_profile='sublattice-split'`` flips the sign of the short-range part
    on the second sublattice. ``wall`` adds a confining ring (positive control
    for eigenvalue detection), given as ``(r_in, thickness, height)``.
    """

    rho: float = 0.7
    amp_long: float = 0.0
    amp_short: float = 0.0
    short_profile: str = "isotropic"
    wall: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not (self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.rho > 1.7:
            raise ValueError(f"rho must be at most 1.7, got {self.rho}")
        if self.short_profile not in ("isotropic", "sublattice-split"):
            raise ValueError(f"unknown short_profile {self.short_profile!r}")

    @property
    def is_zero(self) -> bool:
        return self.amp_long == 0 and self.amp_short == 0 and self.wall is None

    def long_range(self, x1, x2):
        """Smooth extension of ``V_l`` to real arguments."""
        return self.amp_long * japanese_bracket(x1, x2, -self.rho)

    def short_range(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        vs = self.amp_short * japanese_bracket(x1, x2, -1.0 - self.rho)
        vs = np.asarray(vs, dtype=float)
        if self.wall is not None:
            r_in, thick, height = self.wall
            r = np.hypot(x1, x2)
            vs = vs + height * ((r >= r_in) & (r < r_in + thick))
        sign = -1.0 if self.short_profile == "sublattice-split" else 1.0
        return vs, sign * vs


@dataclass
class Potential:
    """A potential realized on a box. ``V_j = V_l + V_{s,j}``."""

    spec: PotentialSpec
    box: LatticeBox
    V_long: np.ndarray
    V_short1: np.ndarray
    V_short2: np.ndarray

    @property
    def V1(self) -> np.ndarray:
        return self.V_long + self.V_short1

    @property
    def V2(self) -> np.ndarray:
        return self.V_long + self.V_short2

    @property
    def sup(self) -> float:
        return float(max(np.abs(self.V1).max(), np.abs(self.V2).max()))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return np.stack([self.V1 * u[0], self.V2 * u[1]])

    def apply_long(self, u: np.ndarray) -> np.ndarray:
        return self.V_long * u

    def apply_short(self, u: np.ndarray) -> np.ndarray:
        return np.stack([self.V_short1 * u[0], self.V_short2 * u[1]])


def realize_potential(spec: PotentialSpec, box: LatticeBox) -> Potential:
    x1, x2 = box.coords
    vl = np.asarray(spec.long_range(x1, x2), dtype=float)
    s1, s2 = spec.short_range(x1, x2)
    return Potential(spec, box, vl, np.asarray(s1, float), np.asarray(s2, float))


def apply_H(u: np.ndarray, V: Potential) -> np.ndarray:
    if u.shape != V.box.shape:
        raise ValueError(f"state shape {u.shape} does not match potential box {V.box.shape}")
    return apply_H0(u, V.box) + V.apply(u)


def discrete_derivative(f, alpha: tuple[int, int]):
    """Backward differences ``d~^alpha f`` of a callable ``f(x1, x2)``.

    Returns a callable evaluating ``(d~_1)^a1 (d~_2)^a2 f`` at integer points,
    where ``d~_j W[x] = W[x] - W[x - e_j]``.
    """
    from math import comb

    a1, a2 = alpha

    def g(x1, x2):
        out = 0.0
        for k1 in range(a1 + 1):
            for k2 in range(a2 + 1):
                c = (-1) ** (k1 + k2) * comb(a1, k1) * comb(a2, k2)
                out = out + c * f(x1 - k1, x2 - k2)
        return out

    return g


@dataclass
class AssumptionScan:
    """Fitted constants ``C_alpha(r) = max_{|x|<=r} |d~^a V| <x>^{|a|+rho}``."""

    radii: tuple[int, ...]
    constants: dict[tuple[int, int], list[float]] = field(default_factory=dict)
    growth_tol: float = 1.05

    def growth(self, alpha) -> float:
        c = self.constants[alpha]
        return c[-1] / c[-2] if c[-2] > 0 else (1.0 if c[-1] == 0 else np.inf)

    @property
    def passed(self) -> bool:
        return all(self.growth(a) <= self.growth_tol for a in self.constants)


def assumption_scan(spec: PotentialSpec, max_order: int = 3, radii=(16, 32, 64)) -> AssumptionScan:
    """Check the long-range derivative bounds and the short-range decay bound."""
    R = max(radii)
    r = np.arange(-R, R + 1)
    x1, x2 = np.meshgrid(r, r, indexing="ij")
    dist = np.maximum(np.abs(x1), np.abs(x2))
    scan = AssumptionScan(tuple(radii))
    for order in range(max_order + 1):
        for a1 in range(order + 1):
            alpha = (a1, order - a1)
            d = discrete_derivative(spec.long_range, alpha)(x1.astype(float), x2.astype(float))
            q = np.abs(d) * japanese_bracket(x1, x2, order + spec.rho)
            scan.constants[alpha] = [float(q[dist <= rad].max()) for rad in radii]
    if spec.wall is None:
        s1, s2 = spec.short_range(x1, x2)
        q = np.maximum(np.abs(s1), np.abs(s2)) * japanese_bracket(x1, x2, 1 + spec.rho)
        scan.constants[("short",)] = [float(q[dist <= rad].max()) for rad in radii]
    return scan
