"""Space-time grid, field containers and finite-difference stencils.

Index conventions used throughout the package::

    phi         (nt+1, nx, nx)     time nodes t_k = k*ht, cell centres
    rho, alpha  (nt, nx, nx)       time intervals (k+1/2)*ht, cell centres
    m           (2d, nt, nx, nx)   one-sided face fluxes owned by each cell,
                                   ordered (axis0 fwd, axis0 bwd, axis1 fwd, ...)
    a           (nt, r)            basis coefficients per time interval
    rho0, rho1, beta  (nx, nx)     boundary-time slices

Spatial boundaries are no-flux: the forward difference vanishes on the last
cell of each axis and the backward difference on the first.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np

from mfgsplit.errors import ConfigurationError


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform cell-centred discretization of a box times [0, 1]."""

    nx: int
    nt: int
    bounds: tuple[tuple[float, float], ...] = ((-1.0, 1.0), (-1.0, 1.0))

    def __post_init__(self):
        if self.nx < 2 or self.nt < 1:
            raise ConfigurationError(f"grid needs nx >= 2 and nt >= 1, got nx={self.nx}, nt={self.nt}")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ConfigurationError(f"empty axis bounds [{lo}, {hi}]")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.d

    @cached_property
    def hx(self) -> np.ndarray:
        return np.array([(hi - lo) / self.nx for lo, hi in self.bounds])

    @property
    def ht(self) -> float:
        return 1.0 / self.nt

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.hx))

    @cached_property
    def domain_volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def centers(self, axis: int) -> np.ndarray:
        lo, _ = self.bounds[axis]
        return lo + (np.arange(self.nx) + 0.5) * self.hx[axis]

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.centers(i) for i in range(self.d)), indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Cell centres flattened row-major, shape (nx**d, d)."""
        return np.stack([c.ravel() for c in self.mesh], axis=-1)

    @property
    def time_nodes(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.ht

    @property
    def time_midpoints(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.ht

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Trapezoid weights on time nodes."""
        w = np.full(self.nt + 1, self.ht)
        w[0] = w[-1] = 0.5 * self.ht
        return w

    def node_field_shape(self) -> tuple[int, ...]:
        return (self.nt + 1, *self.shape)

    def interval_field_shape(self) -> tuple[int, ...]:
        return (self.nt, *self.shape)

    def flux_shape(self) -> tuple[int, ...]:
        return (2 * self.d, self.nt, *self.shape)


# --- stencils -------------------------------------------------------------

def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def forward_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[_sl(u.ndim, axis, slice(0, -1))] = (
        u[_sl(u.ndim, axis, slice(1, None))] - u[_sl(u.ndim, axis, slice(0, -1))]
    ) / h
    return out


def forward_diff_t(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Exact transpose of :func:`forward_diff`."""
    out = np.zeros_like(v)
    inner = v[_sl(v.ndim, axis, slice(0, -1))] / h
    out[_sl(v.ndim, axis, slice(0, -1))] -= inner
    out[_sl(v.ndim, axis, slice(1, None))] += inner
    return out


def backward_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[_sl(u.ndim, axis, slice(1, None))] = (
        u[_sl(u.ndim, axis, slice(1, None))] - u[_sl(u.ndim, axis, slice(0, -1))]
    ) / h
    return out


def backward_diff_t(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Exact transpose of :func:`backward_diff`."""
    out = np.zeros_like(v)
    inner = v[_sl(v.ndim, axis, slice(1, None))] / h
    out[_sl(v.ndim, axis, slice(1, None))] += inner
    out[_sl(v.ndim, axis, slice(0, -1))] -= inner
    return out


def time_diff(phi: np.ndarray, ht: float) -> np.ndarray:
    """Nodes -> intervals forward difference."""
    return (phi[1:] - phi[:-1]) / ht


def time_diff_t(v: np.ndarray, ht: float) -> np.ndarray:
    out = np.zeros((v.shape[0] + 1, *v.shape[1:]))
    out[:-1] -= v / ht
    out[1:] += v / ht
    return out


def time_avg(phi: np.ndarray) -> np.ndarray:
    return 0.5 * (phi[1:] + phi[:-1])


def time_avg_t(v: np.ndarray) -> np.ndarray:
    out = np.zeros((v.shape[0] + 1, *v.shape[1:]))
    out[:-1] += 0.5 * v
    out[1:] += 0.5 * v
    return out


_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def upwind_gradient(u: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Stack the forward and backward differences of ``u`` over each axis.

    Both one-sided differences are scaled by 1/sqrt(2), so that ``|G u|^2 / 2``
    is the average of the two one-sided kinetic Hamiltonians.  ``u`` has the
    spatial axes last; the result gets a leading component axis of length 2d.
    """
    off = u.ndim - grid.d
    comps = []
    for i in range(grid.d):
        comps.append(forward_diff(u, off + i, grid.hx[i]))
        comps.append(backward_diff(u, off + i, grid.hx[i]))
    return _INV_SQRT2 * np.stack(comps)


def upwind_gradient_t(v: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Transpose of :func:`upwind_gradient` (minus the discrete divergence)."""
    off = v.ndim - 1 - grid.d
    out = np.zeros(v.shape[1:])
    for i in range(grid.d):
        out += forward_diff_t(v[2 * i], off + i, grid.hx[i])
        out += backward_diff_t(v[2 * i + 1], off + i, grid.hx[i])
    return _INV_SQRT2 * out


def boundary_flux_mask(grid: SpaceTimeGrid) -> np.ndarray:
    """Flux components that cross the outer boundary (always zero)."""
    mask = np.ones(grid.flux_shape(), dtype=bool)
    for i in range(grid.d):
        fwd = [slice(None)] * (grid.d + 1)
        fwd[1 + i] = -1
        mask[(2 * i, *fwd)] = False
        bwd = [slice(None)] * (grid.d + 1)
        bwd[1 + i] = 0
        mask[(2 * i + 1, *bwd)] = False
    return mask


def sealed_flux_mask(grid: SpaceTimeGrid, sealed: np.ndarray) -> np.ndarray:
    """Admissible flux components given per-interval zero-capacity cells.

    A component is dropped when it crosses the outer boundary or when either
    endpoint of the face it crosses is sealed.  ``sealed`` has the interval
    field shape.
    """
    mask = boundary_flux_mask(grid)
    if sealed is None or not sealed.any():
        return mask
    for i in range(grid.d):
        ax = 1 + i
        nb_fwd = np.zeros_like(sealed)
        nb_fwd[_sl(sealed.ndim, ax, slice(0, -1))] = sealed[_sl(sealed.ndim, ax, slice(1, None))]
        nb_bwd = np.zeros_like(sealed)
        nb_bwd[_sl(sealed.ndim, ax, slice(1, None))] = sealed[_sl(sealed.ndim, ax, slice(0, -1))]
        mask[2 * i] &= ~(sealed | nb_fwd)
        mask[2 * i + 1] &= ~(sealed | nb_bwd)
    return mask


# --- field containers -----------------------------------------------------

class _FieldTuple:
    """Vector-space arithmetic over the array members of a dataclass."""

    def _map(self, fn, other=None):
        kw = {}
        for f in fields(self):
            x = getattr(self, f.name)
            kw[f.name] = fn(x) if other is None else fn(x, getattr(other, f.name))
        return type(self)(**kw)

    def __add__(self, other):
        return self._map(np.add, other)

    def __sub__(self, other):
        return self._map(np.subtract, other)

    def __mul__(self, c: float):
        return self._map(lambda x: c * x)

    __rmul__ = __mul__

    def __neg__(self):
        return self._map(np.negative)

    def copy(self):
        return self._map(np.array)

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def nonfinite_member(self) -> str | None:
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                return f.name
        return None

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.arrays()])

    def unflat(self, v: np.ndarray):
        kw, pos = {}, 0
        for f in fields(self):
            x = getattr(self, f.name)
            kw[f.name] = np.asarray(v[pos:pos + x.size], dtype=float).reshape(x.shape)
            pos += x.size
        return type(self)(**kw)

    @property
    def size(self) -> int:
        return sum(x.size for x in self.arrays())


@dataclass
class CouplingSide(_FieldTuple):
    """The dual/potential variables (a, b, alpha_1..alpha_L, beta, phi)."""

    a: np.ndarray
    b: np.ndarray
    alphas: np.ndarray
    beta: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, r: int, n_local: int) -> "CouplingSide":
        return cls(
            a=np.zeros((grid.nt, r)),
            b=np.zeros(r),
            alphas=np.zeros((n_local, *grid.interval_field_shape())),
            beta=np.zeros(grid.shape),
            phi=np.zeros(grid.node_field_shape()),
        )

    def check_shapes(self, grid: SpaceTimeGrid, r: int, n_local: int) -> None:
        expected = CouplingSide.zeros(grid, r, n_local)
        for name, x, y in zip(("a", "b", "alphas", "beta", "phi"), self.arrays(), expected.arrays()):
            if x.shape != y.shape:
                raise ConfigurationError(f"coupling side member {name} has shape {x.shape}, expected {y.shape}")


@dataclass
class DensitySide(_FieldTuple):
    """The primal variables (rho, m, rho(., 0), rho(., 1))."""

    rho: np.ndarray
    m: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "DensitySide":
        return cls(
            rho=np.zeros(grid.interval_field_shape()),
            m=np.zeros(grid.flux_shape()),
            rho0=np.zeros(grid.shape),
            rho1=np.zeros(grid.shape),
        )

    @classmethod
    def stationary(cls, grid: SpaceTimeGrid, rho0: np.ndarray) -> "DensitySide":
        """rho0 replicated in time with zero flux."""
        return cls(
            rho=np.broadcast_to(rho0, grid.interval_field_shape()).copy(),
            m=np.zeros(grid.flux_shape()),
            rho0=np.array(rho0, dtype=float),
            rho1=np.array(rho0, dtype=float),
        )

    def check_shapes(self, grid: SpaceTimeGrid) -> None:
        expected = DensitySide.zeros(grid)
        for name, x, y in zip(("rho", "m", "rho0", "rho1"), self.arrays(), expected.arrays()):
            if x.shape != y.shape:
                raise ConfigurationError(f"density side member {name} has shape {x.shape}, expected {y.shape}")

    def physical_flux(self) -> np.ndarray:
        """Net flux through the upper face of every cell, shape (d, nt, nx, nx)."""
        d = self.m.shape[0] // 2
        out = []
        for i in range(d):
            fwd = self.m[2 * i]
            bwd = self.m[2 * i + 1]
            ax = 1 + i
            nb = np.zeros_like(bwd)
            nb[_sl(bwd.ndim, ax, slice(0, -1))] = bwd[_sl(bwd.ndim, ax, slice(1, None))]
            out.append(_INV_SQRT2 * (fwd + nb))
        return np.stack(out)


def density_at(q: DensitySide, grid: SpaceTimeGrid, t: float) -> tuple[np.ndarray, float]:
    """Density slice closest to time ``t`` and the time it actually sits at.

    t = 0 and t = 1 return the boundary slices; interior times pick the
    nearest interval midpoint.
    """
    candidates = np.concatenate([[0.0], grid.time_midpoints, [1.0]])
    k = int(np.argmin(np.abs(candidates - t)))
    if k == 0:
        return q.rho0, 0.0
    if k == len(candidates) - 1:
        return q.rho1, 1.0
    return q.rho[k - 1], float(candidates[k])
