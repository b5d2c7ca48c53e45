"""Riesz map of the discrete space-time H^1 product.

The product is

    <phi, h> = sum phi_0 h_0 w + sum phi_N h_N w
               + sum_k ht w (D_t phi)_k (D_t h)_k
               + sum_k omega_k w (D_x phi_k) . (D_x h_k)

with w the cell volume and omega the trapezoid weights in time.  Its Gram
operator is diagonalized in space by the orthonormal DCT-II; every spatial
mode leaves a symmetric positive definite tridiagonal system in time whose
first and last rows carry the Robin-type boundary terms.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from mfgsplit.errors import EllipticSolveError
from mfgsplit.grid import SpaceTimeGrid, forward_diff, forward_diff_t, time_diff, time_diff_t


class EllipticSolverPlan:
    """Cached DCT eigenvalues and Thomas factors for one grid."""

    def __init__(self, grid: SpaceTimeGrid):
        self.grid = grid
        nt, ht = grid.nt, grid.ht
        lam = np.zeros(grid.shape)
        for i in range(grid.d):
            k = np.arange(grid.nx)
            ev = (2.0 - 2.0 * np.cos(np.pi * k / grid.nx)) / grid.hx[i] ** 2
            shape = [1] * grid.d
            shape[i] = grid.nx
            lam = lam + ev.reshape(shape)
        self.eigenvalues = lam

        n = nt + 1
        lam_flat = lam.ravel()
        diag = np.empty((n, lam_flat.size))
        tdiag = np.full(n, 2.0 / ht)
        tdiag[0] = tdiag[-1] = 1.0 / ht
        tdiag[0] += 1.0
        tdiag[-1] += 1.0
        diag[:] = tdiag[:, None] + grid.node_weights[:, None] * lam_flat[None, :]
        off = -1.0 / ht
        self._off = off

        denom = np.empty_like(diag)
        cprime = np.empty((n - 1, lam_flat.size))
        denom[0] = diag[0]
        for k in range(1, n):
            cprime[k - 1] = off / denom[k - 1]
            denom[k] = diag[k] - off * cprime[k - 1]
        if not np.all(denom > 0):
            raise EllipticSolveError("space-time tridiagonal system is not positive definite")
        self._denom = denom
        self._cprime = cprime
        self._axes = tuple(range(1, grid.d + 1))

    def solve(self, functional: np.ndarray) -> np.ndarray:
        """Return h with <h, phi>_{H^1} = sum(functional * phi) for every phi."""
        g = self.grid
        fhat = scipy.fft.dctn(functional, type=2, norm="ortho", axes=self._axes)
        rhs = fhat.reshape(g.nt + 1, -1) / g.cell_volume
        off = self._off
        y = np.empty_like(rhs)
        y[0] = rhs[0] / self._denom[0]
        for k in range(1, g.nt + 1):
            y[k] = (rhs[k] - off * y[k - 1]) / self._denom[k]
        for k in range(g.nt - 1, -1, -1):
            y[k] -= self._cprime[k] * y[k + 1]
        return scipy.fft.idctn(y.reshape(fhat.shape), type=2, norm="ortho", axes=self._axes)

    def solve_riesz(self, rhs_interior: np.ndarray, rhs_t0=None, rhs_t1=None) -> np.ndarray:
        functional = np.array(rhs_interior, dtype=float, copy=True)
        if rhs_t0 is not None:
            functional[0] += rhs_t0
        if rhs_t1 is not None:
            functional[-1] += rhs_t1
        return self.solve(functional)

    def apply_operator(self, h: np.ndarray) -> np.ndarray:
        """Gram operator of the H^1 product in physical space (finite differences)."""
        return h1_gram_apply(h, self.grid)

    def phi_update(self, phi: np.ndarray, residual: np.ndarray, tau: float) -> np.ndarray:
        """phi + tau * Riesz(-residual): the potential step of the primal update."""
        if tau == 0:
            return np.array(phi, copy=True)
        return phi + tau * self.solve(-residual)


def h1_gram_apply(h: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    w = grid.cell_volume
    out = grid.ht * time_diff_t(time_diff(h, grid.ht), grid.ht)
    out[0] += h[0]
    out[-1] += h[-1]
    lap = np.zeros_like(h)
    for i in range(grid.d):
        lap += forward_diff_t(forward_diff(h, 1 + i, grid.hx[i]), 1 + i, grid.hx[i])
    out += grid.node_weights.reshape(-1, *([1] * grid.d)) * lap
    return w * out


def h1_inner(phi: np.ndarray, h: np.ndarray, grid: SpaceTimeGrid) -> float:
    w = grid.cell_volume
    val = np.sum(phi[0] * h[0]) + np.sum(phi[-1] * h[-1])
    val += grid.ht * np.sum(time_diff(phi, grid.ht) * time_diff(h, grid.ht))
    for i in range(grid.d):
        gp = forward_diff(phi, 1 + i, grid.hx[i])
        gh = forward_diff(h, 1 + i, grid.hx[i])
        val += np.sum(grid.node_weights * np.sum(gp * gh, axis=tuple(range(1, grid.d + 1))))
    return float(w * val)
