"""Monotone primal-dual (PDHG-type) iteration for the projected MFG system."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mfgsplit.couplings import BoxCoupling, NonlocalCoupling, TerminalCoupling
from mfgsplit.dynamics import prox_rho_m, update_rho_initial
from mfgsplit.errors import ConfigurationError, DivergenceError
from mfgsplit.grid import (
    CouplingSide,
    DensitySide,
    SpaceTimeGrid,
    sealed_flux_mask,
    time_avg,
    time_diff,
    upwind_gradient,
)
from mfgsplit.operators import LinearMaps, NormEstimate
from mfgsplit.spectral import BasisSet

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-8


@dataclass
class Problem:
    """A fully materialized MFG instance on one grid."""

    grid: SpaceTimeGrid
    basis: BasisSet | None
    rho0: np.ndarray
    terminal: TerminalCoupling
    local: list = field(default_factory=list)
    running_nonlocal: NonlocalCoupling | None = None
    terminal_nonlocal: NonlocalCoupling | None = None
    name: str = ""

    @property
    def use_a(self) -> bool:
        return self.running_nonlocal is not None and self.running_nonlocal.enabled

    @property
    def use_b(self) -> bool:
        return self.terminal_nonlocal is not None and self.terminal_nonlocal.enabled

    def sealed_cells(self) -> np.ndarray:
        sealed = np.zeros(self.grid.interval_field_shape(), dtype=bool)
        for c in self.local:
            if isinstance(c, BoxCoupling):
                sealed |= np.broadcast_to(c.sealed(), sealed.shape)
        return sealed

    def maps(self) -> LinearMaps:
        return LinearMaps(self.grid, self.basis, len(self.local), use_a=self.use_a, use_b=self.use_b)


@dataclass
class SolverConfig:
    tau: float | None = None
    sigma: float | None = None
    safety: float = 0.95
    step_ratio: float = 1.0
    max_iters: int = 100_000
    tol_residual: float = 1e-4
    tol_change: float = 1e-6
    check_every: int = 10
    report_every: int = 100
    seed: int = 0
    norm_iters: int = 5000
    norm_tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.safety < 1.0:
            raise ConfigurationError(f"safety must lie in the open interval (0, 1), got {self.safety}")
        if self.step_ratio <= 0:
            raise ConfigurationError("step_ratio must be positive")
        if self.max_iters < 1 or self.check_every < 1:
            raise ConfigurationError("max_iters and check_every must be >= 1")
        for name in ("tau", "sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class IterationReport:
    iteration: int
    change_s: float
    change_q: float
    hjb: float
    continuity: float
    coupling: dict[str, float]
    mass_drift: float

    def max_residual(self) -> float:
        return max(self.hjb, self.continuity)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class RunResult:
    s: CouplingSide
    q: DensitySide
    reports: list[IterationReport]
    converged: bool
    iterations: int
    tau: float
    sigma: float
    norm: NormEstimate
    wall_time: float = 0.0

    @property
    def final(self) -> IterationReport:
        return self.reports[-1]


def select_steps(norm: float, safety: float = 0.95, ratio: float = 1.0) -> tuple[float, float]:
    """Step sizes with tau * sigma * |C|^2 = safety and tau / sigma = ratio."""
    if not 0.0 < safety < 1.0:
        raise ConfigurationError(f"safety must lie in the open interval (0, 1), got {safety}")
    if not norm > 0:
        raise ConfigurationError("operator norm must be positive")
    root = math.sqrt(safety) / norm
    return root * math.sqrt(ratio), root / math.sqrt(ratio)


class PrimalDualSolver:
    """Owns the operators, step sizes and iteration state for one problem."""

    def __init__(self, problem: Problem, config: SolverConfig | None = None, norm: NormEstimate | None = None):
        self.problem = problem
        self.config = config or SolverConfig()
        self.grid = problem.grid
        self.maps = problem.maps()
        self.flux_mask = sealed_flux_mask(self.grid, problem.sealed_cells())
        self.rho0 = update_rho_initial(problem.rho0)
        cfg = self.config
        self.norm = norm if norm is not None else self.maps.operator_norm(cfg.norm_iters, cfg.norm_tol, cfg.seed)
        tau, sigma = select_steps(self.norm.value, cfg.safety, cfg.step_ratio)
        self.tau = cfg.tau if cfg.tau is not None else tau
        self.sigma = cfg.sigma if cfg.sigma is not None else sigma
        product = self.tau * self.sigma * self.norm.value**2
        if product >= 1.0:
            raise ConfigurationError(
                f"step sizes violate tau*sigma*|C|^2 < 1 (tau={self.tau}, sigma={self.sigma}, product={product:.4f})"
            )

    # -- state ---------------------------------------------------------------
    def initial_state(self) -> tuple[CouplingSide, DensitySide]:
        return self.maps.zeros_s(), DensitySide.stationary(self.grid, self.rho0)

    # -- one iteration -------------------------------------------------------
    def resolvent_M(self, s_in: CouplingSide, tau: float) -> CouplingSide:
        p = self.problem
        a = p.running_nonlocal.resolvent(s_in.a, tau) if self.maps.use_a else np.zeros_like(s_in.a)
        b = p.terminal_nonlocal.resolvent(s_in.b, tau) if self.maps.use_b else np.zeros_like(s_in.b)
        alphas = np.empty_like(s_in.alphas)
        for l, coupling in enumerate(p.local):
            alphas[l] = coupling.resolvent(s_in.alphas[l], tau)
        beta = p.terminal.resolvent(s_in.beta, tau)
        return CouplingSide(a=a, b=b, alphas=alphas, beta=beta, phi=s_in.phi)

    def prox_Xi(self, q_in: DensitySide, sigma: float) -> DensitySide:
        w = q_in.m * self.flux_mask
        rho, m = prox_rho_m(q_in.rho, w, sigma)
        return DensitySide(rho=rho, m=m, rho0=update_rho_initial(self.rho0), rho1=np.maximum(q_in.rho1, 0.0))

    def step(self, s: CouplingSide, q: DensitySide, iteration: int = 0) -> tuple[CouplingSide, DensitySide]:
        tau, sigma = self.tau, self.sigma
        s_new = self.resolvent_M(s - tau * self.maps.apply_C_star(q), tau)
        s_bar = 2.0 * s_new - s
        q_new = self.prox_Xi(q + sigma * self.maps.apply_C(s_bar), sigma)
        for name, side in (("coupling side", s_new), ("density side", q_new)):
            bad = side.nonfinite_member()
            if bad is not None:
                raise DivergenceError(f"{name}.{bad}", iteration)
        return s_new, q_new

    # -- diagnostics ---------------------------------------------------------
    def hjb_field(self, s: CouplingSide) -> np.ndarray:
        g = self.grid
        grad = upwind_gradient(time_avg(s.phi), g) * self.flux_mask
        e = -time_diff(s.phi, g.ht) + 0.5 * np.sum(grad * grad, axis=0)
        if self.maps.n_local:
            e -= s.alphas.sum(axis=0)
        if self.maps.use_a:
            e -= self.maps.basis.synthesize(s.a)
        return e

    def continuity_field(self, q: DensitySide) -> np.ndarray:
        """Discrete rho_t + div m on time nodes."""
        g = self.grid
        f = self.maps.phi_functional(q)
        return f / (g.cell_volume * g.node_weights.reshape(-1, *([1] * g.d)))

    def residuals(self, s: CouplingSide, q: DensitySide, iteration: int = 0,
                  change_s: float = 0.0, change_q: float = 0.0) -> IterationReport:
        g, p = self.grid, self.problem
        w, ht = g.cell_volume, g.ht
        present = q.rho > RHO_FLOOR
        e = self.hjb_field(s)
        hjb = math.sqrt(ht * w * float(np.sum(np.where(present, e * e, 0.0))))
        c = self.continuity_field(q)
        nw = g.node_weights.reshape(-1, *([1] * g.d))
        continuity = math.sqrt(w * float(np.sum(nw * c * c)))

        coupling: dict[str, float] = {}
        if self.maps.use_a:
            proj = self.maps.basis.project(q.rho)
            diff = s.a - p.running_nonlocal.consistency(proj)
            coupling["nonlocal_running"] = math.sqrt(ht * float(np.sum(diff * diff)))
        if self.maps.use_b:
            proj = self.maps.basis.project(q.rho1)
            diff = s.b - p.terminal_nonlocal.consistency(proj)
            coupling["nonlocal_terminal"] = math.sqrt(float(np.sum(diff * diff)))
        for l, cp in enumerate(p.local):
            gap = cp.gap(s.alphas[l], q.rho)
            coupling[f"local_{l}"] = math.sqrt(ht * w * float(np.sum(gap * gap)))
        gap = p.terminal.gap(s.beta, q.rho1)
        coupling["terminal"] = math.sqrt(w * float(np.sum(gap * gap)))

        mass0 = w * float(np.sum(self.rho0))
        masses = np.concatenate([w * q.rho.reshape(g.nt, -1).sum(axis=1), [w * float(np.sum(q.rho1))]])
        drift = float(np.max(np.abs(masses - mass0)))
        return IterationReport(
            iteration=iteration,
            change_s=float(change_s),
            change_q=float(change_q),
            hjb=hjb,
            continuity=continuity,
            coupling=coupling,
            mass_drift=drift,
        )

    def relative_changes(self, s_old, q_old, s_new, q_new) -> tuple[float, float]:
        ds = self.maps.norm_s(s_new - s_old) / max(self.maps.norm_s(s_new), 1.0)
        dq = self.maps.norm_q(q_new - q_old) / max(self.maps.norm_q(q_new), 1.0)
        return ds, dq

    def is_converged(self, rep: IterationReport) -> bool:
        cfg = self.config
        return (
            rep.hjb < cfg.tol_residual
            and rep.continuity < cfg.tol_residual
            and max(rep.change_s, rep.change_q) < cfg.tol_change
        )

    # -- driver --------------------------------------------------------------
    def run(self, state=None, report_path: str | Path | None = None) -> RunResult:
        cfg = self.config
        start = time.perf_counter()
        s, q = state if state is not None else self.initial_state()
        reports: list[IterationReport] = []
        stream = open(report_path, "w") if report_path is not None else None
        converged = False
        n = 0
        try:
            for n in range(1, cfg.max_iters + 1):
                s_new, q_new = self.step(s, q, n)
                if n % cfg.check_every == 0 or n == cfg.max_iters or n == 1:
                    ds, dq = self.relative_changes(s, q, s_new, q_new)
                    rep = self.residuals(s_new, q_new, n, ds, dq)
                    reports.append(rep)
                    if stream is not None:
                        stream.write(rep.to_json() + "\n")
                    if n % cfg.report_every == 0:
                        logger.info("iter %d: hjb=%.3e cont=%.3e ds=%.2e dq=%.2e", n, rep.hjb,
                                    rep.continuity, ds, dq)
                    if self.is_converged(rep):
                        converged = True
                        s, q = s_new, q_new
                        break
                s, q = s_new, q_new
        finally:
            if stream is not None:
                stream.close()
        return RunResult(
            s=s, q=q, reports=reports, converged=converged, iterations=n,
            tau=self.tau, sigma=self.sigma, norm=self.norm, wall_time=time.perf_counter() - start,
        )


def pdhg_step(solver: PrimalDualSolver, s: CouplingSide, q: DensitySide):
    return solver.step(s, q)


def compute_residuals(solver: PrimalDualSolver, s: CouplingSide, q: DensitySide) -> IterationReport:
    return solver.residuals(s, q)


def run(problem: Problem, config: SolverConfig | None = None, report_path=None) -> RunResult:
    return PrimalDualSolver(problem, config).run(report_path=report_path)


__all__ = [
    "Problem",
    "SolverConfig",
    "IterationReport",
    "RunResult",
    "PrimalDualSolver",
    "pdhg_step",
    "compute_residuals",
    "run",
    "select_steps",
]
