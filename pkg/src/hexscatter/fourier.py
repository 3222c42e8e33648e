"""Discrete Fourier transform between a box and its torus grid, and
Fourier multipliers ``F^* m(.) F`` acting on states.

Multipliers on periodic boxes are exact torus operators.  On zero-padded boxes
they are applied on a torus of twice the side and cropped, i.e. the compression
of the infinite-lattice operator to the box.
"""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .lattice import LatticeBox

__all__ = ["forward_F", "inverse_F", "fft_axis", "apply_multiplier", "torus_size"]


def forward_F(u: np.ndarray, box: LatticeBox) -> np.ndarray:
    """``Fu(xi) = (2 pi)^-1 sum_x e^{-i x.xi} u[x]`` on ``xi_j = -pi + 2 pi j / N``."""
    if not box.periodic:
        raise ValueError("forward_F needs a periodic box")
    if u.shape[-2:] != (box.side, box.side):
        raise ValueError(f"state of spatial shape {u.shape[-2:]} does not match box side {box.side}")
    # index m <-> x = m - L; ifftshift moves x = 0 to index 0
    shifted = sfft.ifftshift(u, axes=(-2, -1))
    return sfft.fftshift(sfft.fft2(shifted), axes=(-2, -1)) / (2 * np.pi)


def inverse_F(f: np.ndarray, box: LatticeBox) -> np.ndarray:
    if f.shape[-2:] != (box.side, box.side):
        raise ValueError(f"field of shape {f.shape[-2:]} does not match grid size {box.side}")
    g = sfft.ifft2(sfft.ifftshift(f, axes=(-2, -1))) * (2 * np.pi)
    return sfft.fftshift(g, axes=(-2, -1))


def torus_size(box: LatticeBox) -> int:
    return box.side if box.periodic else 2 * box.side


def fft_axis(M: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(M)


def _to_torus(u: np.ndarray, M: int) -> np.ndarray:
    n = u.shape[-1]
    if M == n:
        return u
    pad = np.zeros(u.shape[:-2] + (M, M), dtype=complex)
    pad[..., :n, :n] = u
    return pad


def apply_multiplier(u: np.ndarray, box: LatticeBox, symbol: np.ndarray) -> np.ndarray:
    """Apply ``F^* m F`` where ``m`` is sampled on the FFT-ordered grid.

    ``symbol`` has spatial shape ``(M, M)`` with ``M = torus_size(box)``; it is
    either scalar-valued (applied to every component) or a ``(M, M, 2, 2)``
    matrix field acting on the two sublattice components.
    """
    n = box.side
    M = torus_size(box)
    uh = sfft.fft2(_to_torus(u, M))
    if symbol.ndim == 2:
        vh = symbol * uh
    else:
        vh = np.einsum("xyij,jxy->ixy", symbol, uh)
    v = sfft.ifft2(vh)
    return v[..., :n, :n] if M != n else v
