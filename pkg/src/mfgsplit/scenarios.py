"""Declarative scenarios: TOML round trip, expression fields and materialization.

A scenario file describes the grid, the interaction kernels, the local and
terminal couplings and the initial density.  Spatial data (terminal cost,
obstacle regions) are small numpy expressions in ``x1``, ``x2`` and ``t``;
see :data:`EXPRESSION_NAMESPACE` for the names they may use.
"""

from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from mfgsplit.couplings import BoxCoupling, EntropyCoupling, NonlocalCoupling, TerminalCoupling
from mfgsplit.errors import ConfigurationError
from mfgsplit.grid import SpaceTimeGrid
from mfgsplit.solver import Problem, SolverConfig
from mfgsplit.spectral import (
    DEFAULT_MODES,
    BasisSet,
    KernelSpec,
    QuadraticForm,
    SeparableAsymmetric,
    SymmetricGaussian,
    build_basis,
    compute_moment_matrix,
)

PRESET_PACKAGE = "mfgsplit.presets"
MASS_TOLERANCE = 1e-10


# --- expressions ------------------------------------------------------------

def _ring_wells(x1, x2):
    def ring_wells(n, radius, sharpness):
        """sum_j (1 - exp(-sharpness |x - x_j|^2)) over n points on a circle."""
        out = np.zeros(np.broadcast(x1, x2).shape)
        for j in range(1, int(n) + 1):
            cx = radius * math.sin(2 * math.pi * j / n)
            cy = radius * math.cos(2 * math.pi * j / n)
            out = out + 1.0 - np.exp(-sharpness * ((x1 - cx) ** 2 + (x2 - cy) ** 2))
        return out
    return ring_wells


def _disk(x1, x2):
    def disk(cx, cy, radius):
        return (x1 - cx) ** 2 + (x2 - cy) ** 2 <= radius**2
    return disk


def _rect(x1, x2):
    def rect(cx, cy, width, height):
        return (np.abs(x1 - cx) <= 0.5 * width) & (np.abs(x2 - cy) <= 0.5 * height)
    return rect


EXPRESSION_NAMESPACE: dict[str, Any] = {
    "pi": math.pi,
    "e": math.e,
    "inf": math.inf,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "abs": np.abs,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}
_GEOMETRY = {"ring_wells": _ring_wells, "disk": _disk, "rect": _rect}
_VARIABLES = ("x1", "x2", "t")

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.Call, ast.Name,
    ast.Load, ast.Constant, ast.IfExp,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.FloorDiv, ast.USub, ast.UAdd,
    ast.BitAnd, ast.BitOr, ast.Invert, ast.Not, ast.And, ast.Or,
    ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq,
)


def compile_expression(text: str):
    """Parse and whitelist an expression; returns a code object."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    known = set(EXPRESSION_NAMESPACE) | set(_GEOMETRY) | set(_VARIABLES)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigurationError(f"expression {text!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in known:
            raise ConfigurationError(f"expression {text!r} uses unknown name {node.id!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, bool)):
            raise ConfigurationError(f"expression {text!r} contains a non-numeric literal")
    return compile(tree, "<scenario>", "eval")


def evaluate_expression(text: str, x1: np.ndarray, x2: np.ndarray, t: float = 0.0) -> np.ndarray:
    code = compile_expression(text)
    ns = dict(EXPRESSION_NAMESPACE)
    ns.update({k: f(x1, x2) for k, f in _GEOMETRY.items()})
    ns.update(x1=x1, x2=x2, t=t)
    with np.errstate(all="ignore"):
        out = eval(code, {"__builtins__": {}}, ns)
    return np.broadcast_to(np.asarray(out), np.broadcast(x1, x2).shape).copy()


# --- config dataclasses -----------------------------------------------------

@dataclass
class GaussianSpec:
    """Isotropic normal N(center, variance), weighted within a mixture."""

    center: list[float]
    variance: float
    weight: float = 1.0

    def __post_init__(self):
        self.center = [float(c) for c in self.center]
        self.variance = float(self.variance)
        self.weight = float(self.weight)
        if not self.variance > 0:
            raise ConfigurationError("Gaussian variance must be positive")
        if self.weight < 0:
            raise ConfigurationError("Gaussian weights must be nonnegative")


@dataclass
class KernelConfig:
    type: str
    amplitude: float
    delta: float | None = None
    delta_minus: list[float] | None = None
    delta_plus: list[float] | None = None
    q: list[list[float]] | None = None
    argument: str | None = None  # separable_asymmetric only: "x-y" (default) or "y-x"

    def __post_init__(self):
        self.amplitude = float(self.amplitude)
        if self.delta is not None:
            self.delta = float(self.delta)
        if self.delta_minus is not None:
            self.delta_minus = [float(v) for v in self.delta_minus]
        if self.delta_plus is not None:
            self.delta_plus = [float(v) for v in self.delta_plus]
        if self.q is not None:
            self.q = [[float(v) for v in row] for row in self.q]
        self.spec()  # validates

    def spec(self) -> KernelSpec:
        if self.type == "gaussian":
            _require(self.delta, "gaussian kernel needs delta")
            return SymmetricGaussian(self.amplitude, self.delta)
        if self.type == "separable_asymmetric":
            _require(self.delta_minus, "separable_asymmetric kernel needs delta_minus")
            _require(self.delta_plus, "separable_asymmetric kernel needs delta_plus")
            return SeparableAsymmetric(self.amplitude, tuple(self.delta_minus), tuple(self.delta_plus),
                                       self.argument or "x-y")
        if self.type == "quadratic_form":
            _require(self.q, "quadratic_form kernel needs q")
            _require(self.delta, "quadratic_form kernel needs delta")
            return QuadraticForm(self.amplitude, tuple(map(tuple, self.q)), self.delta)
        raise ConfigurationError(f"unknown kernel type {self.type!r}")


def _require(value, message: str) -> None:
    if value is None:
        raise ConfigurationError(message)


@dataclass
class Region:
    """Cells where the predicate ``where`` holds get the given bounds."""

    where: str
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        compile_expression(self.where)
        if self.lower is not None:
            self.lower = float(self.lower)
        if self.upper is not None:
            self.upper = float(self.upper)


@dataclass
class LocalCouplingConfig:
    type: str
    lower: float = 0.0
    upper: float = math.inf
    epsilon: float | None = None
    regions: list[Region] = field(default_factory=list)

    def __post_init__(self):
        self.lower = float(self.lower)
        self.upper = float(self.upper)
        self.regions = [r if isinstance(r, Region) else Region(**r) for r in self.regions]
        if self.type == "entropy":
            if self.epsilon is None or not self.epsilon > 0:
                raise ConfigurationError("entropy coupling needs epsilon > 0")
            self.epsilon = float(self.epsilon)
        elif self.type != "box":
            raise ConfigurationError(f"unknown local coupling type {self.type!r}")


@dataclass
class TerminalConfig:
    cost: str = "0"
    lower: float = 0.0
    upper: float = math.inf
    regions: list[Region] = field(default_factory=list)
    lower_mass: float | None = None

    def __post_init__(self):
        compile_expression(self.cost)
        self.lower = float(self.lower)
        self.upper = float(self.upper)
        self.regions = [r if isinstance(r, Region) else Region(**r) for r in self.regions]
        if self.lower_mass is not None:
            self.lower_mass = float(self.lower_mass)


@dataclass
class GridConfig:
    nx: int = 64
    nt: int = 32
    bounds: list[list[float]] = field(default_factory=lambda: [[-1.0, 1.0], [-1.0, 1.0]])
    modes: int = DEFAULT_MODES

    def __post_init__(self):
        self.nx, self.nt, self.modes = int(self.nx), int(self.nt), int(self.modes)
        self.bounds = [[float(lo), float(hi)] for lo, hi in self.bounds]
        if len(self.bounds) != 2:
            raise ConfigurationError("scenarios live on two-dimensional boxes")

    def grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.nx, self.nt, tuple(tuple(b) for b in self.bounds))


@dataclass
class ScenarioConfig:
    name: str
    grid: GridConfig
    initial: list[GaussianSpec]
    terminal: TerminalConfig
    running_kernel: KernelConfig | None = None
    terminal_kernel: KernelConfig | None = None
    local: list[LocalCouplingConfig] = field(default_factory=list)
    solver: SolverConfig = field(default_factory=SolverConfig)
    snapshots: list[float] = field(default_factory=lambda: [0.3, 0.6, 1.0])
    description: str = ""

    def __post_init__(self):
        if not self.initial:
            raise ConfigurationError("initial density needs at least one Gaussian")
        total = sum(gs.weight for gs in self.initial)
        if abs(total - 1.0) > 1e-12:
            raise ConfigurationError(f"initial mixture weights sum to {total}, not 1")
        self.snapshots = [float(t) for t in self.snapshots]
        if any(not 0.0 <= t <= 1.0 for t in self.snapshots):
            raise ConfigurationError("snapshot times must lie in [0, 1]")

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return _strip_none(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        _check_keys(cls, data, "scenario")
        try:
            grid = _build(GridConfig, data.pop("grid", {}), "grid")
            init = data.pop("initial")
            comps = init.get("components") if isinstance(init, dict) else init
            initial = [_build(GaussianSpec, c, "initial component") for c in comps]
            terminal = _build(TerminalConfig, data.pop("terminal", {}), "terminal")
            rk = data.pop("running_kernel", None)
            tk = data.pop("terminal_kernel", None)
            local = [_build(LocalCouplingConfig, c, "local coupling") for c in data.pop("local", [])]
            solver = _build(SolverConfig, data.pop("solver", {}), "solver")
        except KeyError as exc:
            raise ConfigurationError(f"scenario is missing {exc.args[0]!r}") from None
        return cls(
            grid=grid,
            initial=initial,
            terminal=terminal,
            running_kernel=_build(KernelConfig, rk, "running_kernel") if rk else None,
            terminal_kernel=_build(KernelConfig, tk, "terminal_kernel") if tk else None,
            local=local,
            solver=solver,
            **data,
        )

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ScenarioConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"invalid scenario file: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, nx=None, nt=None, modes=None, **solver) -> "ScenarioConfig":
        grid = replace(
            self.grid,
            nx=self.grid.nx if nx is None else nx,
            nt=self.grid.nt if nt is None else nt,
            modes=self.grid.modes if modes is None else modes,
        )
        solver = {k: v for k, v in solver.items() if v is not None}
        return replace(self, grid=grid, solver=replace(self.solver, **solver))


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def _check_keys(cls, data: dict, what: str) -> None:
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigurationError(f"unknown {what} keys: {sorted(extra)}")


def _build(cls, data, what: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{what} must be a table")
    _check_keys(cls, data, what)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"bad {what}: {exc}") from None


# --- presets ----------------------------------------------------------------

def preset_names() -> list[str]:
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_preset(name: str) -> ScenarioConfig:
    res = resources.files(PRESET_PACKAGE).joinpath(f"{name}.toml")
    if not res.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ScenarioConfig.from_toml(res.read_text(encoding="utf-8"))


def build_scenario(source: str | Path, **overrides) -> ScenarioConfig:
    """Preset name or path to a TOML file, with optional grid/solver overrides."""
    path = Path(source)
    if path.suffix == ".toml" or path.exists():
        if not path.is_file():
            raise ConfigurationError(f"scenario file {path} not found")
        cfg = ScenarioConfig.from_toml(path.read_text(encoding="utf-8"))
    else:
        cfg = load_preset(str(source))
    return cfg.with_overrides(**overrides) if overrides else cfg


# --- materialization --------------------------------------------------------

def normalize_density(rho: np.ndarray, cell_volume: float) -> np.ndarray:
    """Rescale a nonnegative slice to discrete mass sum(rho) * cell_volume = 1."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ConfigurationError("density must be finite and nonnegative")
    total = float(np.sum(rho)) * cell_volume
    if not total > 0:
        raise ConfigurationError("density has zero total mass")
    return rho / total


def gaussian_mixture(components: list[GaussianSpec], grid: SpaceTimeGrid) -> np.ndarray:
    x1, x2 = grid.mesh
    out = np.zeros(grid.shape)
    for gs in components:
        r2 = (x1 - gs.center[0]) ** 2 + (x2 - gs.center[1]) ** 2
        out += gs.weight * np.exp(-r2 / (2.0 * gs.variance)) / (2.0 * math.pi * gs.variance)
    return out


def _apply_regions(base_lower, base_upper, regions, x1, x2, t):
    lower = np.full(x1.shape, base_lower)
    upper = np.full(x1.shape, base_upper)
    for reg in regions:
        mask = evaluate_expression(reg.where, x1, x2, t).astype(bool)
        if reg.lower is not None:
            lower[mask] = reg.lower
        if reg.upper is not None:
            upper[mask] = reg.upper
    return lower, upper


@dataclass
class Scenario:
    """A scenario with every field sampled on its grid."""

    config: ScenarioConfig
    grid: SpaceTimeGrid
    basis: BasisSet | None
    rho0: np.ndarray
    g: np.ndarray
    terminal_lower: np.ndarray
    terminal_upper: np.ndarray
    local_fields: list[tuple[np.ndarray, np.ndarray] | None]
    problem: Problem

    def obstacle_mask(self, k: int | None = None) -> np.ndarray:
        """Cells with zero capacity on interval ``k`` (or on every interval)."""
        sealed = self.problem.sealed_cells()
        return sealed.all(axis=0) if k is None else sealed[k]

    def obstacle_mask_at(self, t: float) -> np.ndarray:
        """Zero-capacity cells at the slice :func:`density_at` picks for ``t``."""
        candidates = np.concatenate([[0.0], self.grid.time_midpoints, [1.0]])
        k = int(np.argmin(np.abs(candidates - t)))
        if k == len(candidates) - 1:
            return self.terminal_upper <= 0
        return self.problem.sealed_cells()[max(k - 1, 0)]


def materialize(config: ScenarioConfig, check_kernels: bool = True) -> Scenario:
    grid = config.grid.grid()
    x1, x2 = grid.mesh
    w = grid.cell_volume
    needs_basis = config.running_kernel is not None or config.terminal_kernel is not None
    basis = build_basis(grid, config.grid.modes) if needs_basis else None

    local, local_fields = [], []
    for lc in config.local:
        if lc.type == "entropy":
            local.append(EntropyCoupling(lc.epsilon))
            local_fields.append(None)
            continue
        lows, ups = zip(*(_apply_regions(lc.lower, lc.upper, lc.regions, x1, x2, t)
                          for t in grid.time_midpoints))
        lower, upper = np.stack(lows), np.stack(ups)
        if np.any(lower > upper):
            raise ConfigurationError("box coupling has lower > upper on some cells")
        if np.any(lower.reshape(grid.nt, -1).sum(axis=1) * w > 1.0 + MASS_TOLERANCE):
            raise ConfigurationError("running lower bound carries more than unit mass")
        if np.any(upper.reshape(grid.nt, -1).sum(axis=1) * w < 1.0 - MASS_TOLERANCE):
            raise ConfigurationError("running upper bound cannot hold unit mass")
        local.append(BoxCoupling(lower, upper))
        local_fields.append((lower, upper))

    tc = config.terminal
    g = evaluate_expression(tc.cost, x1, x2, 1.0).astype(float)
    if not np.all(np.isfinite(g)):
        raise ConfigurationError("terminal cost is not finite on the grid")
    lower, upper = _apply_regions(tc.lower, tc.upper, tc.regions, x1, x2, 1.0)
    if tc.lower_mass is not None:
        total = float(lower.sum()) * w
        if not total > 0:
            raise ConfigurationError("lower_mass given but the terminal lower bound is zero")
        lower = lower * (tc.lower_mass / total)
    if float(lower.sum()) * w > 1.0 + MASS_TOLERANCE:
        raise ConfigurationError(f"terminal lower bound carries mass {lower.sum() * w:.6g} > 1")
    if float(upper.sum()) * w < 1.0 - MASS_TOLERANCE:
        raise ConfigurationError("terminal upper bound cannot hold unit mass")
    if np.any(lower > upper):
        raise ConfigurationError("terminal coupling has lower > upper on some cells")
    terminal = TerminalCoupling(g, lower, upper)

    # agents cannot start inside a cell that is closed on the first interval
    rho0 = gaussian_mixture(config.initial, grid)
    for lf in local_fields:
        if lf is not None:
            rho0 = np.where(lf[1][0] <= 0, 0.0, rho0)
    rho0 = normalize_density(rho0, w)

    def _nonlocal(kc):
        if kc is None:
            return None
        moments = compute_moment_matrix(kc.spec(), basis, grid)
        return NonlocalCoupling(moments, check=check_kernels)

    problem = Problem(
        grid=grid,
        basis=basis,
        rho0=rho0,
        terminal=terminal,
        local=local,
        running_nonlocal=_nonlocal(config.running_kernel),
        terminal_nonlocal=_nonlocal(config.terminal_kernel),
        name=config.name,
    )
    return Scenario(config, grid, basis, rho0, g, lower, upper, local_fields, problem)


__all__ = [
    "GaussianSpec",
    "KernelConfig",
    "Region",
    "LocalCouplingConfig",
    "TerminalConfig",
    "GridConfig",
    "ScenarioConfig",
    "Scenario",
    "build_scenario",
    "load_preset",
    "preset_names",
    "materialize",
    "normalize_density",
    "gaussian_mixture",
    "evaluate_expression",
]
