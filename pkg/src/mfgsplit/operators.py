"""The coupling operator C, its exact discrete adjoint, and the Hilbert-space products."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mfgsplit.elliptic import EllipticSolverPlan, h1_inner
from mfgsplit.grid import (
    CouplingSide,
    DensitySide,
    SpaceTimeGrid,
    time_avg,
    time_avg_t,
    time_diff,
    time_diff_t,
    upwind_gradient,
    upwind_gradient_t,
)
from mfgsplit.spectral import BasisSet

logger = logging.getLogger(__name__)


class LinearMaps:
    """C : coupling side -> density side, and C* under the solver's inner products.

    ``use_a`` / ``use_b`` switch the running and terminal nonlocal coefficient
    blocks on; a disabled block contributes a zero column to C.
    """

    def __init__(
        self,
        grid: SpaceTimeGrid,
        basis: BasisSet | None,
        n_local: int,
        use_a: bool = True,
        use_b: bool = False,
        plan: EllipticSolverPlan | None = None,
    ):
        self.grid = grid
        self.basis = basis
        self.r = basis.r if basis is not None else 0
        self.n_local = n_local
        self.use_a = use_a and self.r > 0
        self.use_b = use_b and self.r > 0
        self.plan = plan if plan is not None else EllipticSolverPlan(grid)

    # -- containers ---------------------------------------------------------
    def zeros_s(self) -> CouplingSide:
        return CouplingSide.zeros(self.grid, self.r, self.n_local)

    def zeros_q(self) -> DensitySide:
        return DensitySide.zeros(self.grid)

    def random_s(self, rng: np.random.Generator) -> CouplingSide:
        s = self.zeros_s()
        s = s.unflat(rng.standard_normal(s.size))
        if not self.use_a:
            s.a[:] = 0.0
        if not self.use_b:
            s.b[:] = 0.0
        return s

    def random_q(self, rng: np.random.Generator) -> DensitySide:
        q = self.zeros_q()
        return q.unflat(rng.standard_normal(q.size))

    # -- the operator -------------------------------------------------------
    def apply_C(self, s: CouplingSide) -> DensitySide:
        g = self.grid
        s.check_shapes(g, self.r, self.n_local)
        rho = -time_diff(s.phi, g.ht)
        if self.n_local:
            rho -= s.alphas.sum(axis=0)
        if self.use_a:
            rho -= self.basis.synthesize(s.a)
        m = -upwind_gradient(time_avg(s.phi), g)
        rho1 = s.phi[-1] - s.beta
        if self.use_b:
            rho1 = rho1 - self.basis.synthesize(s.b)
        return DensitySide(rho=rho, m=m, rho0=-s.phi[0].copy(), rho1=rho1)

    def phi_functional(self, q: DensitySide) -> np.ndarray:
        """Coefficients F with sum(F * phi) = <C(0,...,0,phi), q>.

        Divided by the quadrature weights this is the discrete rho_t + div m.
        """
        g = self.grid
        w, ht = g.cell_volume, g.ht
        f = -ht * w * time_diff_t(q.rho, ht)
        f -= ht * w * time_avg_t(upwind_gradient_t(q.m, g))
        f[0] -= w * q.rho0
        f[-1] += w * q.rho1
        return f

    def apply_C_star(self, q: DensitySide) -> CouplingSide:
        g = self.grid
        q.check_shapes(g)
        a = -self.basis.project(q.rho) if self.use_a else np.zeros((g.nt, self.r))
        b = -self.basis.project(q.rho1) if self.use_b else np.zeros(self.r)
        alphas = np.broadcast_to(-q.rho, (self.n_local, *q.rho.shape)).copy()
        phi = self.plan.solve(self.phi_functional(q))
        return CouplingSide(a=a, b=b, alphas=alphas, beta=-q.rho1.copy(), phi=phi)

    # -- products -----------------------------------------------------------
    def inner_q(self, q1: DensitySide, q2: DensitySide) -> float:
        g = self.grid
        w, ht = g.cell_volume, g.ht
        val = ht * w * (np.sum(q1.rho * q2.rho) + np.sum(q1.m * q2.m))
        val += w * (np.sum(q1.rho0 * q2.rho0) + np.sum(q1.rho1 * q2.rho1))
        return float(val)

    def inner_s(self, s1: CouplingSide, s2: CouplingSide) -> float:
        g = self.grid
        w, ht = g.cell_volume, g.ht
        val = ht * np.sum(s1.a * s2.a) + np.sum(s1.b * s2.b)
        val += ht * w * np.sum(s1.alphas * s2.alphas) + w * np.sum(s1.beta * s2.beta)
        return float(val + h1_inner(s1.phi, s2.phi, g))

    def norm_q(self, q: DensitySide) -> float:
        return float(np.sqrt(max(self.inner_q(q, q), 0.0)))

    def norm_s(self, s: CouplingSide) -> float:
        return float(np.sqrt(max(self.inner_s(s, s), 0.0)))

    def operator_norm(self, iters: int = 2000, tol: float = 1e-6, seed: int = 0) -> "NormEstimate":
        rng = np.random.default_rng(seed)
        return estimate_operator_norm(
            self.apply_C, self.apply_C_star, self.random_s(rng), self.inner_s, iters=iters, tol=tol
        )


def inner_product_density_side(maps: LinearMaps, q1: DensitySide, q2: DensitySide) -> float:
    return maps.inner_q(q1, q2)


def inner_product_coupling_side(maps: LinearMaps, s1: CouplingSide, s2: CouplingSide) -> float:
    return maps.inner_s(s1, s2)


@dataclass
class NormEstimate:
    value: float
    converged: bool
    iterations: int
    history: list[float] = field(default_factory=list)


def estimate_operator_norm(
    apply: Callable,
    adjoint: Callable,
    start,
    inner: Callable,
    iters: int = 2000,
    tol: float = 1e-6,
) -> NormEstimate:
    """Power iteration on C*C; returns sqrt of the Rayleigh-quotient estimate.

    The Rayleigh quotients are nondecreasing in exact arithmetic.  If the
    relative increment never drops below ``tol`` the last estimate comes back
    with ``converged=False``.
    """
    nrm = np.sqrt(inner(start, start))
    if nrm == 0:
        return NormEstimate(0.0, True, 0, [0.0])
    x = start * (1.0 / nrm)
    history: list[float] = []
    lam_old = 0.0
    for it in range(1, iters + 1):
        y = adjoint(apply(x))
        lam = inner(y, x)
        history.append(float(np.sqrt(max(lam, 0.0))))
        ny = np.sqrt(inner(y, y))
        if ny == 0:
            return NormEstimate(0.0, True, it, history)
        if it > 1 and abs(lam - lam_old) <= tol * abs(lam):
            return NormEstimate(history[-1], True, it, history)
        lam_old = lam
        x = y * (1.0 / ny)
    logger.warning("operator norm power iteration hit the cap of %d iterations", iters)
    return NormEstimate(history[-1], False, iters, history)
