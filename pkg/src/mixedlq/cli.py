"""Command line front end: ``mixedlq {solve,simulate,verify,are}``.

Exit status: 0 success, 1 a verification check failed, 2 bad input,
3 numerical failure, 4 no convergence.  Diagnostics go to standard error,
prefixed with the error code.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, MixedLQError, NoConvergence, NumericError
from .model import load_problem, validate
from .riccati import solve_algebraic, solve_riccati, write_riccati_csv
from .simulate import AffinePolicy, estimate_cost, simulate_paths, write_paths_csv
from .synthesis import GainSchedule, build_gain_schedule, write_gains_csv
from .verify import (adjoint_reconstruct, matrix_property_suite, optimality_residuals,
                     residual_checks, value_identity)

OUT_DIR_ENV = "MIXEDLQ_OUT_DIR"

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOCONV = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    problem_path: Path
    steps: int = 512
    paths: int = 20000
    seed: int = 42
    tol: float = 1e-8
    t_step: float = 5.0
    t_max: float = 500.0
    out_dir: Path = Path(".")
    antithetic: bool = False

    def __post_init__(self):
        if self.steps < 2:
            raise InputError("--steps must be >= 2")
        if self.paths < 2:
            raise InputError("--paths must be >= 2")
        if self.seed < 0:
            raise InputError("--seed must be non-negative")
        if not self.tol > 0:
            raise InputError("--tol must be > 0")
        if not self.t_step > 0:
            raise InputError("--t-step must be > 0")
        if self.t_max < self.t_step:
            raise InputError("--t-max must be >= --t-step")


def _dump(obj, path):
    # json writes floats with repr(), the shortest string that round-trips
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _matrix(a):
    return np.asarray(a).tolist()


def _load_policy(path, spec, grid):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read policy {path}: {exc}") from None
    gains = GainSchedule.from_dict(doc)
    if gains.grid != grid:
        raise InputError(f"policy grid ({gains.grid.steps} steps, T={gains.grid.T:g}) "
                         f"does not match the run ({grid.steps} steps, T={grid.T:g})")
    policy = AffinePolicy.from_gains(gains)
    policy.check(spec)
    return policy


def _prepare(cfg, policy_path=None):
    spec = load_problem(cfg.problem_path)
    sol = solve_riccati(spec, cfg.steps)
    if policy_path is None:
        policy = AffinePolicy.from_gains(build_gain_schedule(spec, sol.grid, sol))
    else:
        policy = _load_policy(policy_path, spec, sol.grid)
    return spec, sol, policy


def cmd_solve(cfg: RunConfig, args) -> int:
    spec = load_problem(cfg.problem_path)
    reg = validate(spec)
    sol = solve_riccati(spec, cfg.steps)
    gains = build_gain_schedule(spec, sol.grid, sol)
    write_riccati_csv(sol, cfg.out_dir / "riccati.csv")
    write_gains_csv(gains, cfg.out_dir / "gains.csv")
    summary = {
        "regularity": reg.tag.value,
        "evidence": reg.evidence,
        "steps": sol.grid.steps,
        "predicted_value": sol.value(spec.x0),
        "classical_value": sol.classic_value(spec.x0),
        "P1_0": _matrix(sol.P1[0]),
        "P2_0": _matrix(sol.P2[0]),
    }
    _dump(summary, cfg.out_dir / "summary.json")
    if args.write_policy:
        _dump(gains.to_dict(), cfg.out_dir / "policy.json")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    spec, sol, policy = _prepare(cfg, args.policy)
    bundle = simulate_paths(spec, policy, cfg.paths, cfg.seed, antithetic=cfg.antithetic)
    cost = estimate_cost(spec, bundle, sol)
    (cfg.out_dir / "cost.json").write_text(cost.to_json() + "\n")
    if args.write_paths:
        write_paths_csv(bundle, cfg.out_dir / "paths.csv")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    spec, sol, policy = _prepare(cfg, args.policy)
    bundle = simulate_paths(spec, policy, cfg.paths, cfg.seed, antithetic=cfg.antithetic)
    report = optimality_residuals(spec, bundle, adjoint_reconstruct(spec, bundle, sol))
    checks = residual_checks(report)
    cost = estimate_cost(spec, bundle, sol)
    ident = value_identity(spec, sol, cost)
    suite = matrix_property_suite(cfg.seed)
    checks["value"] = ident["value_check"]["pass"]
    if ident["ordering_check"] is not None:
        checks["ordering"] = ident["ordering_check"]["pass"]
    checks["suite"] = all(r["pass"] for r in suite.values())
    doc = {
        "r1_norm": report.r1_norm,
        "r1_stderr": report.r1_stderr,
        "r2_norm": report.r2_norm,
        "bsde_drift_norm": report.bsde_drift_norm,
        "terminal_error": report.terminal_error,
        "tolerances_used": report.tolerances_used,
        "value_check": ident["value_check"],
        "ordering_check": ident["ordering_check"],
        "suite": suite,
        "checks": checks,
        "pass": all(checks.values()),
    }
    _dump(doc, cfg.out_dir / "verify.json")
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        print(f"VerificationFailed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_are(cfg: RunConfig, args) -> int:
    spec = load_problem(cfg.problem_path)
    res = solve_algebraic(spec, cfg.tol, cfg.t_step, cfg.t_max)
    doc = {
        "P1inf": _matrix(res.P1inf),
        "P2inf": _matrix(res.P2inf),
        "residual1": res.residual1,
        "residual2": res.residual2,
        "horizons": res.horizons_used,
        "trace_P2": [float(np.trace(P)) for P in res.trace_P2],
        "monotone": res.monotone,
        "monotone_margin": res.monotone_margin,
    }
    _dump(doc, cfg.out_dir / "are.json")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "are": cmd_are}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem-path", required=True, type=Path)
    common.add_argument("--steps", type=int, default=512)
    common.add_argument("--paths", type=int, default=20000)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument("--t-step", type=float, default=5.0)
    common.add_argument("--t-max", type=float, default=500.0)
    common.add_argument("--out-dir", type=Path, default=None,
                        help=f"output directory (default: ${OUT_DIR_ENV} or the current one)")
    common.add_argument("--antithetic", action="store_true")

    p = argparse.ArgumentParser(prog="mixedlq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="Riccati pair, gains and summary")
    s.add_argument("--write-policy", action="store_true",
                   help="also write the optimal gains as policy.json")
    for name in ("simulate", "verify"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--policy", type=Path, default=None,
                       help="gain schedule JSON to use instead of the optimal gains")
        if name == "simulate":
            s.add_argument("--write-paths", action="store_true")
    sub.add_parser("are", parents=[common], help="stationary Riccati pair")
    return p


def _config(args) -> RunConfig:
    out = args.out_dir or Path(os.environ.get(OUT_DIR_ENV, "."))
    return RunConfig(args.problem_path, args.steps, args.paths, args.seed, args.tol,
                     args.t_step, args.t_max, out, args.antithetic)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except NoConvergence as exc:
        print(exc, file=sys.stderr)
        return EXIT_NOCONV
    except InputError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, MixedLQError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"InputError: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
