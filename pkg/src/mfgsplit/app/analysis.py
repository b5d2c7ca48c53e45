"""Post-run measurements on density slices."""

from __future__ import annotations

import numpy as np

from mfgsplit.grid import SpaceTimeGrid


def _coords(shape, grid: SpaceTimeGrid | None):
    if grid is None:
        return [np.arange(n, dtype=float) for n in shape]
    return [grid.centers(i) for i in range(grid.d)]


def detect_peaks(values: np.ndarray, min_height: float, min_separation: float,
                 grid: SpaceTimeGrid | None = None) -> list[tuple[tuple[float, ...], float]]:
    """Local maxima above ``min_height``, thinned greedily by distance.

    A cell counts as a local maximum when no neighbour (8-connectivity in 2-D)
    is larger, so flat tops qualify.  Candidates are visited from the highest
    value down and kept if they are at least ``min_separation`` away from every
    peak kept so far.  Positions are cell centres, or indices without ``grid``.
    """
    v = np.asarray(values, dtype=float)
    padded = np.pad(v, 1, mode="constant", constant_values=-np.inf)
    is_max = v > min_height
    for offset in np.ndindex(*(3,) * v.ndim):
        if all(o == 1 for o in offset):
            continue
        window = padded[tuple(slice(o, o + n) for o, n in zip(offset, v.shape))]
        is_max &= v >= window
    idx = np.argwhere(is_max)
    if idx.size == 0:
        return []
    vals = v[tuple(idx.T)]
    order = np.lexsort((np.arange(len(vals)), -vals))
    axes = _coords(v.shape, grid)
    kept: list[tuple[tuple[float, ...], float]] = []
    for k in order:
        p = np.array([axes[i][idx[k, i]] for i in range(v.ndim)])
        if all(np.linalg.norm(p - np.asarray(q)) >= min_separation for q, _ in kept):
            kept.append((tuple(float(c) for c in p), float(vals[k])))
    return kept


def mass_bias(values: np.ndarray, axis: int, pivot: float, grid: SpaceTimeGrid) -> float:
    """(mass with x_axis < pivot) - (mass with x_axis > pivot); ``axis`` is 1-based."""
    v = np.asarray(values, dtype=float)
    x = grid.mesh[axis - 1]
    w = grid.cell_volume
    return float(w * (v[x < pivot].sum() - v[x > pivot].sum()))


def rotation_asymmetry(values: np.ndarray) -> float:
    """Relative L1 distance between a square slice and its 90 degree rotation."""
    v = np.asarray(values, dtype=float)
    denom = np.abs(v).sum()
    return float(np.abs(v - np.rot90(v)).sum() / denom) if denom > 0 else 0.0


def support_measure(values: np.ndarray, threshold: float, grid: SpaceTimeGrid) -> float:
    """Area of {values > threshold}."""
    return float(np.count_nonzero(np.asarray(values) > threshold) * grid.cell_volume)
