"""mfgsplit command line: run a scenario, check its kernels, or re-evaluate a saved state.

Exit codes: 0 converged (or check passed), 2 not converged (or kernel not
monotone), 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from mfgsplit.app.output import (
    RunManifest,
    atomic_write,
    config_hash,
    read_manifest,
    save_state,
    write_snapshot,
)
from mfgsplit.errors import ConfigurationError, DivergenceError, EllipticSolveError, ResourceError
from mfgsplit.grid import density_at
from mfgsplit.operators import NormEstimate
from mfgsplit.scenarios import ScenarioConfig, build_scenario, materialize
from mfgsplit.solver import PrimalDualSolver
from mfgsplit.spectral import MONOTONE_TOLERANCE, compute_moment_matrix, monotonicity_check

log = logging.getLogger("mfgsplit")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _times(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad snapshot list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfgsplit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="solve a scenario and write snapshots + manifest")
    r.add_argument("--scenario", required=True, help="preset name or path to a TOML file")
    r.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
    r.add_argument("--nx", type=int, help="cells per space axis")
    r.add_argument("--nt", type=int, help="time intervals")
    r.add_argument("--modes", type=int, help="cosine modes r for nonlocal terms")
    r.add_argument("--max-iters", type=int, help="iteration cap")
    r.add_argument("--tol", type=float, help="residual tolerance")
    r.add_argument("--tol-change", type=float, help="relative iterate-change tolerance")
    r.add_argument("--seed", type=int, help="seed of the power-iteration start vector")
    r.add_argument("--tau", type=float, help="primal step, default from the operator norm")
    r.add_argument("--sigma", type=float, help="dual step, default from the operator norm")
    r.add_argument("--step-ratio", type=float, help="tau/sigma when steps are automatic")
    r.add_argument("--snapshots", type=_times, help="comma separated times, default from scenario")

    k = sub.add_parser("check-kernel", help="print the smallest eigenvalue of the symmetrized moment matrices")
    k.add_argument("--scenario", required=True)
    k.add_argument("--nx", type=int, help="cells per space axis")
    k.add_argument("--modes", type=int, help="cosine modes r")

    s = sub.add_parser("residuals", help="recompute diagnostics of a saved run")
    s.add_argument("--state", required=True, type=Path, help="run directory written by `run`")
    return p


def _config_from(args) -> ScenarioConfig:
    overrides = dict(
        nx=getattr(args, "nx", None),
        nt=getattr(args, "nt", None),
        modes=getattr(args, "modes", None),
        max_iters=getattr(args, "max_iters", None),
        tol_residual=getattr(args, "tol", None),
        tol_change=getattr(args, "tol_change", None),
        seed=getattr(args, "seed", None),
        tau=getattr(args, "tau", None),
        sigma=getattr(args, "sigma", None),
        step_ratio=getattr(args, "step_ratio", None),
    )
    cfg = build_scenario(args.scenario)
    cfg = cfg.with_overrides(**overrides)
    if getattr(args, "snapshots", None):
        cfg = ScenarioConfig(**{**cfg.__dict__, "snapshots": args.snapshots})
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    scenario = materialize(cfg)
    solver = PrimalDualSolver(scenario.problem, cfg.solver)
    log.info("|C| = %.6f, tau = %.4g, sigma = %.4g", solver.norm.value, solver.tau, solver.sigma)
    result = solver.run(report_path=out / "reports.ndjson")

    files = ["scenario.toml", "reports.ndjson"]
    atomic_write(out / "scenario.toml", cfg.to_toml())
    snaps = []
    for t in cfg.snapshots:
        values, actual = density_at(result.q, scenario.grid, t)
        rec = write_snapshot(values, scenario.grid, t, actual, out)
        snaps.append(asdict(rec))
        files += [rec.csv, rec.pgm]
    files += [f"state/{f}" for f in save_state(out / "state", result.s, result.q)]

    solver_used = asdict(cfg.solver)
    solver_used.update(
        tau=result.tau,
        sigma=result.sigma,
        operator_norm=result.norm.value,
        norm_iterations=result.norm.iterations,
        norm_converged=result.norm.converged,
    )
    manifest = RunManifest(
        config_hash=config_hash(cfg.to_dict()),
        scenario=cfg.to_dict(),
        solver=solver_used,
        converged=result.converged,
        iterations=result.iterations,
        final_residuals=asdict(result.final),
        snapshots=snaps,
        files=files,
    )
    atomic_write(out / "timing.json", json.dumps({"wall_time_s": result.wall_time}) + "\n")
    manifest.write(out)
    f = result.final
    print(f"{cfg.name}: {'converged' if result.converged else 'NOT converged'} after {result.iterations} "
          f"iterations; hjb={f.hjb:.3e} continuity={f.continuity:.3e} mass_drift={f.mass_drift:.3e}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_check_kernel(args) -> int:
    cfg = _config_from(args)
    scenario = materialize(cfg, check_kernels=False)
    ok = True
    found = False
    for label, kc in (("running", cfg.running_kernel), ("terminal", cfg.terminal_kernel)):
        if kc is None:
            continue
        found = True
        moments = compute_moment_matrix(kc.spec(), scenario.basis, scenario.grid)
        lam = monotonicity_check(moments)
        mono = lam >= -MONOTONE_TOLERANCE
        ok &= mono
        print(json.dumps({
            "kernel": label,
            "type": kc.type,
            "modes": moments.r,
            "lambda_min": lam,
            "max_asymmetry": moments.asymmetry(),
            "monotone": bool(mono),
        }, sort_keys=True))
    if not found:
        print(json.dumps({"kernel": None, "monotone": True}))
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_residuals(args) -> int:
    from mfgsplit.app.output import load_state

    run_dir: Path = args.state
    if not (run_dir / "scenario.toml").is_file():
        raise ConfigurationError(f"{run_dir} does not look like a run directory (no scenario.toml)")
    cfg = ScenarioConfig.from_toml((run_dir / "scenario.toml").read_text())
    norm = None
    if (run_dir / "manifest.json").is_file():
        used = read_manifest(run_dir / "manifest.json")["solver"]
        norm = NormEstimate(used["operator_norm"], used["norm_converged"], used["norm_iterations"])
    scenario = materialize(cfg)
    solver = PrimalDualSolver(scenario.problem, cfg.solver, norm=norm)
    s, q = load_state(run_dir / "state")
    rep = solver.residuals(s, q)
    print(rep.to_json())
    return EXIT_OK


COMMANDS = {"run": cmd_run, "check-kernel": cmd_check_kernel, "residuals": cmd_residuals}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DivergenceError, EllipticSolveError, ResourceError, OSError, ValueError) as exc:
        print(f"mfgsplit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
