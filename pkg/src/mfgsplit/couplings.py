"""Interaction couplings and the resolvents of their conjugates.

Running local couplings act on the interval density ``rho`` through one dual
field each; the terminal coupling acts on ``rho(., 1)``; nonlocal couplings
act on basis coefficients through a moment matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from mfgsplit.errors import ConfigurationError
from mfgsplit.spectral import MomentMatrix, is_monotone, monotonicity_check


# --- scalar resolvents ----------------------------------------------------

def resolvent_alpha_box(z, tau, lower, upper):
    """Prox of tau * max(alpha*lower, alpha*upper) evaluated at z."""
    z = np.asarray(z, dtype=float)
    return np.minimum(np.maximum(0.0, z - tau * np.asarray(upper)), z - tau * np.asarray(lower))


def resolvent_beta_terminal(z, tau, g, lower, upper):
    """Prox of tau * max((beta-g)*lower, (beta-g)*upper) evaluated at z."""
    z = np.asarray(z, dtype=float)
    return np.minimum(np.maximum(g, z - tau * np.asarray(upper)), z - tau * np.asarray(lower))


def resolvent_alpha_entropy(z, tau, eps):
    """Root of alpha + tau * exp(alpha / eps) = z.

    With u = (z - alpha) / eps the equation is u + log u = log(tau/eps) + z/eps,
    which is solved by Newton from below (the left side is concave and
    increasing, so the iterates stay bracketed) and polished with one Newton
    step on the original equation.
    """
    z = np.asarray(z, dtype=float)
    if np.any(np.asarray(eps) <= 0):
        raise ConfigurationError("entropy coupling needs eps > 0")
    tau = np.broadcast_to(np.asarray(tau, dtype=float), z.shape)
    if np.all(tau == 0):
        return z.copy()
    with np.errstate(divide="ignore"):
        y = np.log(tau / eps) + z / eps
    u = np.where(y >= 1.0, y - np.log(np.maximum(y, 1.0)), np.exp(np.minimum(y, 1.0) - 1.0))
    small = y < -30.0
    for _ in range(60):
        h = u + np.log(np.where(small, 1.0, u)) - y
        step = h / (1.0 + 1.0 / np.where(small, 1.0, u))
        u_new = np.where(small, u, u - step)
        if np.all(np.abs(u_new - u) <= 1e-15 * np.maximum(1.0, u)):
            u = u_new
            break
        u = u_new
    u = np.where(small, np.exp(np.minimum(y, 0.0)), u)
    alpha = np.where(tau == 0, z, z - eps * u)
    with np.errstate(over="ignore"):
        e = tau * np.exp(alpha / eps)
    polish = (alpha + e - z) / (1.0 + e / eps)
    alpha = np.where(np.isfinite(polish), alpha - polish, alpha)
    return alpha


# --- coupling types -------------------------------------------------------

def _weighted(x: np.ndarray, weight: float) -> float:
    return float(weight * np.sum(x))


def _max_linear(v: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """max(v*lower, v*upper) with 0*inf read as 0."""
    with np.errstate(invalid="ignore"):
        lo = np.where(v == 0, 0.0, v * lower)
        hi = np.where(v == 0, 0.0, v * upper)
    return np.maximum(lo, hi)


@dataclass
class BoxCoupling:
    """Hard density bounds lower <= rho <= upper on every interval cell."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower < 0) or np.any(self.lower > self.upper):
            raise ConfigurationError("box coupling needs 0 <= lower <= upper")

    def resolvent(self, z: np.ndarray, tau: float) -> np.ndarray:
        return resolvent_alpha_box(z, tau, self.lower, self.upper)

    def conjugate(self, alpha: np.ndarray, weight: float) -> float:
        return _weighted(_max_linear(alpha, self.lower, self.upper), weight)

    def gap(self, alpha: np.ndarray, rho: np.ndarray) -> np.ndarray:
        return rho - np.clip(rho + alpha, self.lower, self.upper)

    def sealed(self) -> np.ndarray:
        return self.upper <= 0


@dataclass
class EntropyCoupling:
    """F(rho) = eps (rho log rho - rho), so f(rho) = eps log rho."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("entropy coupling needs eps > 0")

    def resolvent(self, z: np.ndarray, tau: float) -> np.ndarray:
        return resolvent_alpha_entropy(z, tau, self.eps)

    def conjugate(self, alpha: np.ndarray, weight: float) -> float:
        return _weighted(self.eps * np.exp(alpha / self.eps), weight)

    def gap(self, alpha: np.ndarray, rho: np.ndarray) -> np.ndarray:
        return rho - np.exp(alpha / self.eps)

    def sealed(self):
        return None


LocalRunningCoupling = BoxCoupling | EntropyCoupling


@dataclass
class TerminalCoupling:
    """Terminal cost g(x) plus bounds lower <= rho(., 1) <= upper."""

    g: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), self.g.shape).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), self.g.shape).copy()
        if np.any(self.lower < 0) or np.any(self.lower > self.upper):
            raise ConfigurationError("terminal coupling needs 0 <= lower <= upper")

    def resolvent(self, z: np.ndarray, tau: float) -> np.ndarray:
        return resolvent_beta_terminal(z, tau, self.g, self.lower, self.upper)

    def conjugate(self, beta: np.ndarray, weight: float) -> float:
        return _weighted(_max_linear(beta - self.g, self.lower, self.upper), weight)

    def gap(self, beta: np.ndarray, rho1: np.ndarray) -> np.ndarray:
        return rho1 - np.clip(rho1 + beta - self.g, self.lower, self.upper)


class NonlocalCoupling:
    """Linear nonlocal coupling f(z) = z through a monotone moment matrix.

    A user may pass ``resolvent`` (signature ``(c_in, tau) -> c_out``) to model
    a nonlinear coupling; the linear one solves (K + tau I) c = K c_in.
    """

    def __init__(
        self,
        moments: MomentMatrix,
        enabled: bool = True,
        resolvent: Callable | None = None,
        check: bool = True,
    ):
        self.moments = moments
        self.enabled = enabled
        self._custom = resolvent
        if check and enabled and not is_monotone(moments):
            raise ConfigurationError(
                f"moment matrix is not monotone (lambda_min = {monotonicity_check(moments):.3e})"
            )

    def resolvent(self, c_in: np.ndarray, tau: float) -> np.ndarray:
        if not self.enabled:
            return np.zeros_like(c_in)
        if self._custom is not None:
            return self._custom(c_in, tau)
        return resolvent_linear(c_in, tau, self.moments)

    def consistency(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients the coupling prescribes for density projections ``coeffs``."""
        return coeffs @ self.moments.entries.T


def resolvent_linear(c_in: np.ndarray, tau: float, moments: MomentMatrix) -> np.ndarray:
    """(I + tau K^{-1})^{-1} applied along the last axis of ``c_in``."""
    c_in = np.asarray(c_in, dtype=float)
    if tau == 0:
        return c_in.copy()
    lu = moments.factor(tau)
    rhs = c_in.reshape(-1, moments.r) @ moments.entries.T
    out = scipy.linalg.lu_solve(lu, rhs.T).T
    return out.reshape(c_in.shape)


resolvent_a_linear = resolvent_linear
resolvent_b_linear = resolvent_linear


def conjugate_values(coupling, field: np.ndarray, weight: float) -> float:
    """Value of the conjugate functional (diagnostics only)."""
    return coupling.conjugate(field, weight)
