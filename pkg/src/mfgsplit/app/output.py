"""Snapshots (CSV + PGM), saved solver state and the run manifest.

Everything is plain text except the 8-bit graymap; floats are written with
17 significant digits so they read back bit-identically.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mfgsplit.grid import CouplingSide, DensitySide, SpaceTimeGrid

FLOAT_FMT = "%.17g"


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- snapshots ----------------------------------------------------------------

def snapshot_csv_text(values: np.ndarray, grid: SpaceTimeGrid) -> str:
    x1, x2 = grid.mesh
    lines = ["x1,x2,value"]
    for a, b, v in zip(x1.ravel(), x2.ravel(), np.asarray(values, dtype=float).ravel()):
        lines.append(f"{float(a)!r},{float(b)!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def read_snapshot_csv(path: str | Path, nx: int | None = None):
    """Returns (x1, x2, value) arrays; reshaped to (nx, nx) when ``nx`` is given."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x1,x2,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    cols = [arr[:, i] for i in range(3)]
    if nx is not None:
        cols = [c.reshape(nx, nx) for c in cols]
    return tuple(cols)


def pgm_bytes(values: np.ndarray) -> tuple[bytes, float, float]:
    """Binary graymap, x1 to the right and x2 upwards, linearly scaled to [min, max].

    pixel = round(255 * (v - vmin) / (vmax - vmin)); a constant slice maps to 0.
    """
    v = np.asarray(values, dtype=float)
    vmin, vmax = float(v.min()), float(v.max())
    if vmax > vmin:
        pix = np.rint(255.0 * (v - vmin) / (vmax - vmin))
    else:
        pix = np.zeros_like(v)
    img = pix.astype(np.uint8).T[::-1]  # rows: x2 descending, columns: x1
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes(), vmin, vmax


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    # header is "P5 <w> <h> <maxval>" followed by exactly one whitespace byte
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary graymap")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data[m.end(): m.end() + w * h], dtype=np.uint8).reshape(h, w)


@dataclass
class SnapshotRecord:
    requested_time: float
    actual_time: float
    csv: str
    pgm: str
    vmin: float
    vmax: float


def write_snapshot(values: np.ndarray, grid: SpaceTimeGrid, requested: float, actual: float,
                   out_dir: str | Path, stem: str = "rho") -> SnapshotRecord:
    out_dir = Path(out_dir)
    base = f"{stem}_t{requested:.3f}"
    atomic_write(out_dir / f"{base}.csv", snapshot_csv_text(values, grid))
    raw, vmin, vmax = pgm_bytes(values)
    atomic_write(out_dir / f"{base}.pgm", raw)
    return SnapshotRecord(requested, actual, f"{base}.csv", f"{base}.pgm", vmin, vmax)


# --- solver state ------------------------------------------------------------

_S_FIELDS = ("a", "b", "alphas", "beta", "phi")
_Q_FIELDS = ("rho", "m", "rho0", "rho1")


def save_state(out_dir: str | Path, s: CouplingSide, q: DensitySide) -> list[str]:
    """One single-column CSV per array plus ``shapes.json``; returns relative paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shapes, written = {}, []
    for prefix, obj, names in (("s", s, _S_FIELDS), ("q", q, _Q_FIELDS)):
        for name in names:
            arr = np.asarray(getattr(obj, name), dtype=float)
            key = f"{prefix}_{name}"
            shapes[key] = list(arr.shape)
            lines = "\n".join(FLOAT_FMT % v for v in arr.ravel())
            atomic_write(out_dir / f"{key}.csv", lines + ("\n" if arr.size else ""))
            written.append(f"{key}.csv")
    atomic_write(out_dir / "shapes.json", json.dumps(shapes, indent=2, sort_keys=True) + "\n")
    written.append("shapes.json")
    return written


def load_state(state_dir: str | Path) -> tuple[CouplingSide, DensitySide]:
    state_dir = Path(state_dir)
    shapes = json.loads((state_dir / "shapes.json").read_text())
    arrays = {}
    for key, shape in shapes.items():
        text = (state_dir / f"{key}.csv").read_text().split()
        arrays[key] = np.array([float(v) for v in text], dtype=float).reshape(shape)
    s = CouplingSide(**{n: arrays[f"s_{n}"] for n in _S_FIELDS})
    q = DensitySide(**{n: arrays[f"q_{n}"] for n in _Q_FIELDS})
    return s, q


# --- manifest -------------------------------------------------------------------

def _json_safe(obj):
    """Replace non-finite floats by strings so the manifest stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def config_hash(config_dict: dict) -> str:
    canon = json.dumps(_json_safe(config_dict), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    """Deterministic summary of a run.  Wall time lives in ``timing.json``."""

    config_hash: str
    scenario: dict
    solver: dict
    converged: bool
    iterations: int
    final_residuals: dict
    snapshots: list[dict] = field(default_factory=list)
    files: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_json_safe(copy.deepcopy(self.__dict__)), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        missing = [f for f in self.files if not (out_dir / f).exists()]
        if missing:
            raise FileNotFoundError(f"manifest lists missing files: {missing}")
        path = out_dir / "manifest.json"
        atomic_write(path, self.to_json())
        return path


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
