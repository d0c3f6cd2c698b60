"""Command line entry point: ``rmpsim run`` and ``rmpsim verify``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .centralized import ConfigurationError
from .checks import SUITES, _jsonable, closed_form_comparison, run_suite
from .plot import emit_plot
from .scenario import BUILTINS, ScenarioError, builtin, load
from .sim import CONVERGENCE_TOL, SimConfig, simulate

EXIT_OK, EXIT_CONFIG, EXIT_TERMINATED = 0, 1, 2
DEFAULT_OUT = "rmpsim-out"


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; exit code 2 means early termination
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rmpsim", description="Multi-robot RMPflow simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a scenario")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", metavar="PATH", help="JSON scenario file")
    src.add_argument("--builtin", metavar="NAME", help=f"one of: {', '.join(BUILTINS)}")
    r.add_argument("--mode", choices=("centralized", "decentralized"))
    r.add_argument("--dt", type=float, metavar="S")
    r.add_argument("--t-final", type=float, metavar="S")
    r.add_argument("--integrator", choices=("rk4", "semi-implicit-euler"))
    r.add_argument("--cadence", type=int, metavar="N", help="log every N-th step")
    r.add_argument("--out", metavar="DIR", help=f"output directory (else $RMPSIM_OUT, "
                                                f"the scenario's outputs.dir, ./{DEFAULT_OUT})")
    r.add_argument("--plot", action="store_true", help="also write an SVG plot")

    v = sub.add_parser("verify", help="run acceptance suites")
    v.add_argument("--suite", default="all", help=f"one of: {', '.join(SUITES)}")
    return p


def output_dir(flag, scenario) -> Path:
    """--out, then $RMPSIM_OUT, then the scenario's outputs.dir, then the default."""
    for candidate in (flag, os.environ.get("RMPSIM_OUT"), scenario.outputs.dir):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUT)


def _coord_names(dim: int) -> list:
    return ["x", "y", "z"][:dim] if dim <= 3 else [f"c{k}" for k in range(dim)]


def write_trajectory(path: Path, log, dim: int):
    names = _coord_names(dim)
    header = ["t"]
    for rid in log.robot_ids:
        header += [f"{n}{rid}" for n in names] + [f"v{n}{rid}" for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(log.t):
            row = [repr(float(t))]
            for r in range(len(log.robot_ids)):
                row += [repr(float(x)) for x in log.q[k, r]]
                row += [repr(float(x)) for x in log.qdot[k, r]]
            w.writerow(row)


def summarize(scenario, config: SimConfig, log) -> dict:
    final = log.final()
    d_s = scenario.safety_distance()
    flags = {
        "completed": not log.terminated,
        "converged": log.converged(CONVERGENCE_TOL),
        "collision_free": None if d_s is None else bool(log.min_distance.min() > d_s),
    }
    out = {
        "scenario": scenario.name,
        "meta": scenario.meta,
        "config": {"dt": config.dt, "t_final": config.t_final, "integrator": config.integrator,
                   "mode": config.mode, "cadence": config.cadence},
        "final": final,
        "convergence_tolerance": CONVERGENCE_TOL,
        "flags": flags,
        "termination": {"terminated": log.terminated, "reason": log.termination,
                        "step": log.termination_step, "steps_completed": log.steps_completed},
        "safety_distance": d_s,
        "series": {"t": log.t.tolist(), "V": log.V.tolist(),
                   "min_distance": log.min_distance.tolist()},
    }
    if scenario.meta.get("compare") == "closed-form":
        out["closed_form_comparison"] = closed_form_comparison(scenario, config.dt, config.t_final)
    return _jsonable(out)


def _load_scenario(args):
    if args.builtin is not None:
        return builtin(args.builtin)
    return load(args.scenario)


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args)
        scenario = scenario.replace(mode=args.mode, dt=args.dt, t_final=args.t_final,
                                    integrator=args.integrator, cadence=args.cadence)
        config = scenario.sim_config()
        loop = scenario.closed_loop(config.mode)
    except (ScenarioError, ConfigurationError, ValueError, OSError) as err:
        print(f"rmpsim: {err}", file=sys.stderr)
        return EXIT_CONFIG

    log = simulate(loop, scenario.initial_state(), config)
    out = output_dir(args.out, scenario)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / scenario.outputs.trajectory, log, scenario.dim)
    summary = summarize(scenario, config, log)
    (out / scenario.outputs.summary).write_text(json.dumps(summary, indent=2) + "\n")
    if args.plot or scenario.outputs.plot:
        svg = emit_plot(log, scenario.goals())
        (out / scenario.outputs.svg).write_text(svg)
    if log.terminated:
        print(f"rmpsim: early termination: {log.termination}", file=sys.stderr)
        return EXIT_TERMINATED
    f = log.final()
    print(f"{scenario.name}: t={f['t']:.3f}s V={f['V']:.4g} min_distance={f['min_distance']:.4g} "
          f"converged={summary['flags']['converged']} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"rmpsim: unknown suite {args.suite!r}; choose from {', '.join(SUITES)}",
              file=sys.stderr)
        return EXIT_CONFIG
    results = run_suite(args.suite)
    report = {"suite": args.suite, "passed": all(r.passed for r in results),
              "criteria": [r.to_json() for r in results]}
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_CONFIG


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    np.seterr(all="ignore")  # non-finite states are detected and reported by the simulator
    if args.command == "run":
        return cmd_run(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
