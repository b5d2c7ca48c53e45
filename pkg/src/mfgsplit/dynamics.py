"""Proximal step of the kinetic functional rho * |m/rho|^2 / 2 and the boundary slices."""

from __future__ import annotations

import numpy as np

from mfgsplit.errors import ConfigurationError

_NEWTON_ITERS = 80


def prox_rho_m(r, w, sigma: float):
    """Pointwise prox of sigma * (|m|^2 / (2 rho) + indicator{rho >= 0, m << rho}).

    ``w`` carries the flux components on its first axis.  Positive roots of
    (rho - r)(rho + sigma)^2 = sigma |w|^2 / 2 give rho, and then
    m = rho w / (rho + sigma); otherwise the prox is (0, 0).  The cubic is
    increasing and convex to the right of max(r, 0), so Newton started from
    the upper bracket decreases monotonically onto the root.
    """
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[1:] != r.shape:
        raise ConfigurationError(f"flux shape {w.shape} does not match density shape {r.shape}")
    if not sigma > 0:
        raise ConfigurationError("prox step sigma must be positive")
    wsq = np.sum(w * w, axis=0)
    c = 0.5 * sigma * wsq
    lo = np.maximum(r, 0.0)
    rho = lo + np.sqrt(wsq) * np.sqrt(0.5 * sigma) + 1.0
    positive = (r > 0) | (c > -r * sigma**2)
    for _ in range(_NEWTON_ITERS):
        sp = rho + sigma
        f = (rho - r) * sp * sp - c
        df = sp * sp + 2.0 * (rho - r) * sp
        step = f / df
        rho_new = np.maximum(rho - step, lo)
        if np.all(np.abs(rho_new - rho) <= 1e-15 * np.maximum(rho, 1.0)):
            rho = rho_new
            break
        rho = rho_new
    rho = np.where(positive, rho, 0.0)
    m = w * (rho / (rho + sigma))
    return rho, m


def kinetic_objective(rho, m, r, w, sigma: float):
    """Objective minimized by :func:`prox_rho_m` (with +inf outside the domain)."""
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    msq = np.sum(m * m, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kin = np.where(rho > 0, msq / (2.0 * np.where(rho > 0, rho, 1.0)), np.where(msq == 0, 0.0, np.inf))
    kin = np.where(rho < 0, np.inf, kin)
    pen = ((rho - r) ** 2 + np.sum((m - w) ** 2, axis=0)) / (2.0 * sigma)
    return kin + pen


def update_rho_initial(rho0: np.ndarray) -> np.ndarray:
    """The initial slice is pinned to the data."""
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(rho0 < 0):
        raise ConfigurationError("initial density has negative entries")
    return rho0.copy()


def update_rho_terminal(rho1, beta_bar, b_synth, phi1_bar, sigma: float) -> np.ndarray:
    """rho(., 1) - sigma (sum b zeta + beta) + sigma phi(., 1), clamped at zero."""
    return np.maximum(rho1 - sigma * b_synth - sigma * beta_bar + sigma * phi1_bar, 0.0)
