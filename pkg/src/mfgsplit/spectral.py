"""Cosine basis on the box, interaction kernels and their moment matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg

from mfgsplit.errors import ConfigurationError, ResourceError
from mfgsplit.grid import SpaceTimeGrid

DEFAULT_MODES = 64
DEFAULT_MEMORY_BUDGET = 256 * 2**20


# --- basis ----------------------------------------------------------------

def cosine_modes(r: int, d: int = 2) -> list[tuple[int, ...]]:
    """First ``r`` multi-indices ordered by total degree, then lexicographically."""
    modes: list[tuple[int, ...]] = []
    total = 0
    while len(modes) < r:
        shell = [idx for idx in np.ndindex(*(total + 1,) * d) if sum(idx) == total]
        modes.extend(sorted(shell))
        total += 1
    return modes[:r]


def cosine_1d(p: int, x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    length = hi - lo
    if p == 0:
        return np.full_like(np.asarray(x, dtype=float), 1.0 / np.sqrt(length))
    return np.sqrt(2.0 / length) * np.cos(p * np.pi * (np.asarray(x) - lo) / length)


@dataclass
class BasisSet:
    """Tensor-product cosine modes sampled at the cell centres."""

    modes: list[tuple[int, ...]]
    table: np.ndarray          # (r, nx, ..., nx)
    tables_1d: list[np.ndarray]  # per axis, (max_index + 1, nx)
    weight: float

    @property
    def r(self) -> int:
        return len(self.modes)

    @property
    def flat_table(self) -> np.ndarray:
        return self.table.reshape(self.r, -1)

    def project(self, u: np.ndarray) -> np.ndarray:
        """Coefficients sum_x u(x) zeta_i(x) h^d over the trailing spatial axes."""
        d = self.table.ndim - 1
        lead = u.shape[: u.ndim - d]
        return (u.reshape(*lead, -1) @ self.flat_table.T) * self.weight

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        """sum_i c_i zeta_i on the grid; ``c`` has the mode axis last."""
        return (c @ self.flat_table).reshape(*c.shape[:-1], *self.table.shape[1:])

    def gram(self) -> np.ndarray:
        z = self.flat_table
        return (z @ z.T) * self.weight


def build_basis(grid: SpaceTimeGrid, r: int = DEFAULT_MODES) -> BasisSet:
    if r < 0:
        raise ConfigurationError("number of modes must be nonnegative")
    modes = cosine_modes(r, grid.d)
    top = max((max(m) for m in modes), default=0)
    if top >= grid.nx:
        raise ConfigurationError(f"mode index {top} not resolved on nx={grid.nx}; reduce r")
    tables_1d = [
        np.stack([cosine_1d(p, grid.centers(i), *grid.bounds[i]) for p in range(top + 1)])
        for i in range(grid.d)
    ]
    table = np.empty((r, *grid.shape))
    for n, idx in enumerate(modes):
        t = tables_1d[0][idx[0]]
        for i in range(1, grid.d):
            t = np.multiply.outer(t, tables_1d[i][idx[i]])
        table[n] = t
    return BasisSet(modes=modes, table=table, tables_1d=tables_1d, weight=grid.cell_volume)


# --- kernels --------------------------------------------------------------

def gamma_profile(x, delta_minus: float, delta_plus: float):
    """Two-sided Gaussian profile: width delta_minus for x < 0, delta_plus for x >= 0."""
    x = np.asarray(x, dtype=float)
    width = np.where(x < 0, delta_minus, delta_plus)
    return np.exp(-(x**2) / (2.0 * width**2))


def gamma_cosine_transform(freq, delta_minus: float, delta_plus: float):
    """Closed form of the integral of cos(2 pi freq x) * gamma(x) over the real line."""
    freq = np.asarray(freq, dtype=float)
    c = 2.0 * np.pi**2 * freq**2
    return np.sqrt(np.pi / 2.0) * (
        delta_minus * np.exp(-c * delta_minus**2) + delta_plus * np.exp(-c * delta_plus**2)
    )


@dataclass(frozen=True)
class SymmetricGaussian:
    amplitude: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError("kernel width must be positive")


@dataclass(frozen=True)
class SeparableAsymmetric:
    """Product over axes of gamma_{delta_minus[i], delta_plus[i]}(x_i - y_i).

    ``argument="y-x"`` evaluates the profiles at y_i - x_i instead, which is the
    same as swapping the two widths.
    """

    amplitude: float
    delta_minus: tuple[float, ...]
    delta_plus: tuple[float, ...]
    argument: str = "x-y"

    def __post_init__(self):
        object.__setattr__(self, "delta_minus", tuple(float(v) for v in self.delta_minus))
        object.__setattr__(self, "delta_plus", tuple(float(v) for v in self.delta_plus))
        if len(self.delta_minus) != len(self.delta_plus):
            raise ConfigurationError("delta_minus and delta_plus need one entry per axis")
        if min(self.delta_minus + self.delta_plus) <= 0:
            raise ConfigurationError("kernel widths must be positive")
        if self.argument not in ("x-y", "y-x"):
            raise ConfigurationError(f"argument must be 'x-y' or 'y-x', got {self.argument!r}")

    def widths(self) -> list[tuple[float, float]]:
        """(width for x_i - y_i < 0, width for x_i - y_i >= 0) per axis."""
        pairs = list(zip(self.delta_minus, self.delta_plus))
        return pairs if self.argument == "x-y" else [(dp, dm) for dm, dp in pairs]


@dataclass(frozen=True)
class QuadraticForm:
    """amplitude * exp(-(x-y)^T Q (x-y) / (2 delta^2))."""

    amplitude: float
    q: tuple[tuple[float, ...], ...]
    delta: float

    def __post_init__(self):
        qm = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", tuple(tuple(float(v) for v in row) for row in qm))
        if qm.ndim != 2 or qm.shape[0] != qm.shape[1] or not np.allclose(qm, qm.T):
            raise ConfigurationError("Q must be a symmetric square matrix")
        if np.any(np.diag(qm) <= 0) or not self.delta > 0:
            raise ConfigurationError("Q needs a positive diagonal and delta > 0")


KernelSpec = Union[SymmetricGaussian, SeparableAsymmetric, QuadraticForm]


def kernel_eval(spec: KernelSpec | Callable, x, y) -> np.ndarray:
    """K(x, y) for points with the coordinate axis last (broadcasting)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if callable(spec) and not isinstance(spec, (SymmetricGaussian, SeparableAsymmetric, QuadraticForm)):
        return np.asarray(spec(x, y), dtype=float)
    diff = x - y
    if isinstance(spec, SymmetricGaussian):
        return spec.amplitude * np.exp(-np.sum(diff**2, axis=-1) / (2.0 * spec.delta**2))
    if isinstance(spec, SeparableAsymmetric):
        out = np.full(diff.shape[:-1], spec.amplitude)
        for i, (dm, dp) in enumerate(spec.widths()):
            out = out * gamma_profile(diff[..., i], dm, dp)
        return out
    if isinstance(spec, QuadraticForm):
        qm = np.asarray(spec.q)
        quad = np.einsum("...i,ij,...j->...", diff, qm, diff)
        return spec.amplitude * np.exp(-quad / (2.0 * spec.delta**2))
    raise ConfigurationError(f"unknown kernel spec {spec!r}")


def _axis_factors(spec: KernelSpec) -> list[Callable] | None:
    if isinstance(spec, SymmetricGaussian):
        return [lambda s, dl=spec.delta: np.exp(-(s**2) / (2.0 * dl**2))] * 2
    if isinstance(spec, SeparableAsymmetric):
        return [
            lambda s, dm=dm, dp=dp: gamma_profile(s, dm, dp)
            for dm, dp in spec.widths()
        ]
    return None


# --- moment matrices ------------------------------------------------------

@dataclass
class MomentMatrix:
    """r x r kernel coefficients k_pq with cached resolvent factorizations."""

    entries: np.ndarray
    _factors: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def r(self) -> int:
        return self.entries.shape[0]

    def factor(self, tau: float):
        key = float(tau)
        if key not in self._factors:
            mat = self.entries + tau * np.eye(self.r)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
            if np.min(np.abs(np.diag(lu))) <= 1e-14 * max(1.0, np.abs(mat).max()):
                raise ConfigurationError(f"K + tau I is singular for tau={tau}")
            self._factors[key] = (lu, piv)
        return self._factors[key]

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.T))) if self.r else 0.0

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "MomentMatrix":
        return cls(np.atleast_2d(np.loadtxt(path, delimiter=",")))


def compute_moment_matrix(
    spec: KernelSpec | Callable,
    basis: BasisSet,
    grid: SpaceTimeGrid,
    chunk_rows: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    separable: bool = True,
) -> MomentMatrix:
    """Midpoint-rule moment matrix k_pq = sum_{x,y} K(x,y) zeta_p(x) zeta_q(y) h^2d.

    Separable kernels go through products of 1-D moment matrices; everything
    else streams the nx^d x nx^d kernel matrix in blocks of ``chunk_rows``
    rows (x points).
    """
    factors = _axis_factors(spec) if separable else None
    if factors is not None and len(factors) == grid.d:
        return MomentMatrix(_separable_moments(spec, factors, basis, grid))

    pts = grid.points
    n = pts.shape[0]
    if chunk_rows is None:
        chunk_rows = max(1, min(n, memory_budget // (8 * n * (grid.d + 3))))
    if chunk_rows * n * 8 * (grid.d + 3) > memory_budget:
        raise ResourceError(
            f"a {chunk_rows}-row block of the {n}x{n} kernel needs about "
            f"{chunk_rows * n * 8 * (grid.d + 3)} bytes; use chunk_rows <= "
            f"{max(1, memory_budget // (8 * n * (grid.d + 3)))} or raise memory_budget"
        )
    z = basis.flat_table
    w = basis.weight
    # rows of KZ^T are computed independently per block and contracted once at
    # the end, so the result does not depend on the block size.
    kz = np.empty((n, basis.r))
    for start in range(0, n, chunk_rows):
        stop = min(n, start + chunk_rows)
        block = kernel_eval(spec, pts[start:stop, None, :], pts[None, :, :])
        for i in range(stop - start):
            kz[start + i] = block[i] @ z.T
    return MomentMatrix((z @ kz) * w * w)


def _separable_moments(spec, factors, basis: BasisSet, grid: SpaceTimeGrid) -> np.ndarray:
    mats = []
    for i, f in enumerate(factors):
        c = grid.centers(i)
        kern = f(c[:, None] - c[None, :])
        t = basis.tables_1d[i]
        mats.append((t @ kern @ t.T) * grid.hx[i] ** 2)
    modes = np.array(basis.modes, dtype=int).reshape(basis.r, grid.d)
    out = np.full((basis.r, basis.r), float(spec.amplitude))
    for i, mat in enumerate(mats):
        out = out * mat[np.ix_(modes[:, i], modes[:, i])]
    return out


def monotonicity_check(moments: MomentMatrix | np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part; >= -1e-8 certifies monotonicity."""
    k = moments.entries if isinstance(moments, MomentMatrix) else np.asarray(moments)
    if k.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (k + k.T)).min())


MONOTONE_TOLERANCE = 1e-8


def is_monotone(moments: MomentMatrix | np.ndarray) -> bool:
    return monotonicity_check(moments) >= -MONOTONE_TOLERANCE
