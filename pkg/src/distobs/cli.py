"""Command-line front end.

Subcommands: check, synthesize, simulate, setpoint, delay-demo.
Exit codes: 0 success, 2 invalid input, 3 synthesis failure, 4 numerical
breakdown.
"""

from __future__ import annotations

import argparse
import sys as _sys

import numpy as np

from . import fileio
from .errors import NumericalError, SynthesisError, ValidationError
from .model import RANK_TOL, check_joint, is_strongly_connected
from .synth import SynthesisConfig, synthesize
from .sim import assemble_closed_loop, initial_state, simulate_continuous
from .setpoint import design_setpoint_controller, evaluate_tracking
from .delay import run_delay_demo


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="distobs",
        description="Distributed observer-based controller synthesis for "
                    "multi-channel linear systems.")
    sub = p.add_subparsers(dest="command", metavar="command")

    c = sub.add_parser("check", help="validate a system file and its graph")
    c.add_argument("system", help="system JSON file")
    c.add_argument("--rank-tol", type=float, default=RANK_TOL)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("synthesize", help="design gains for one channel")
    s.add_argument("system", help="system JSON file")
    s.add_argument("--spectrum", required=True,
                   help="comma-separated target eigenvalues, e.g. '-1,-2,-1+2i,-1-2i'")
    s.add_argument("--q", type=int, default=1, help="designing channel (default 1)")
    s.add_argument("--mode", choices=("full", "minimal"), default="full")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--feedback", default=None,
                   help="JSON file with per-channel feedback gains F (default zero)")
    s.add_argument("--out", default="gains.json", help="gains output path")
    s.add_argument("--report", default=None, help="optional JSON report path")
    s.add_argument("--no-tree-gains", action="store_true",
                   help="skip the deterministic consensus-gain term")
    s.add_argument("--rank-tol", type=float, default=RANK_TOL)
    s.set_defaults(func=cmd_synthesize)

    r = sub.add_parser("simulate", help="integrate the assembled closed loop")
    r.add_argument("system", help="system JSON file")
    r.add_argument("gains", help="gains file written by synthesize")
    r.add_argument("--T", type=float, default=10.0, help="horizon (default 10)")
    r.add_argument("--h", type=float, default=None, help="fixed step size")
    r.add_argument("--x0", default=None,
                   help="comma-separated plant initial state (default random unit)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="trace.csv", help="CSV trace path")
    r.set_defaults(func=cmd_simulate)

    t = sub.add_parser("setpoint", help="track constant references via integrators")
    t.add_argument("scenario", help="system JSON file with 'r' and optional 'rate'")
    t.add_argument("--q", type=int, default=1)
    t.add_argument("--rate", type=float, default=None,
                   help="override the scenario's convergence rate")
    t.add_argument("--T", type=float, default=None,
                   help="horizon (default 20 / |slowest eigenvalue|)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None, help="optional CSV trace path")
    t.add_argument("--report", default=None, help="optional JSON report path")
    t.set_defaults(func=cmd_setpoint)

    d = sub.add_parser("delay-demo",
                       help="deadbeat-style design under communication delays")
    d.add_argument("--n", type=int, default=2, help="plant state dimension")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--rho", type=float, default=0.5,
                   help="target spectral radius in (0, 1)")
    d.add_argument("--steps", type=int, default=60)
    d.add_argument("--scenario", default=None,
                   help="delay scenario JSON (default: packaged three-channel case)")
    d.add_argument("--out", default=None, help="optional JSON report path")
    d.set_defaults(func=cmd_delay_demo)

    return p


def cmd_check(args) -> int:
    sys, graph = fileio.load_system(args.system)
    report = check_joint(sys, tol=args.rank_tol)
    connected = is_strongly_connected(graph)
    for line in report.lines():
        print(line)
    print(f"strongly connected graph: {'ok' if connected else 'FAIL'}")
    return 0 if report.ok and connected else 2


def cmd_synthesize(args) -> int:
    sys, graph = fileio.load_system(args.system)
    spectrum = fileio.parse_spectrum(args.spectrum)
    if args.feedback is not None:
        F = fileio.load_feedback(args.feedback, sys)
    else:
        F = fileio.zero_feedback(sys)
    cfg = SynthesisConfig(seed=args.seed, tree_gains=not args.no_tree_gains,
                          rank_tol=args.rank_tol)
    gains, report = synthesize(sys, graph, F, spectrum, args.q, args.mode, cfg)
    fileio.save_gains(args.out, sys, gains, F)
    if args.report is not None:
        fileio.save_json(args.report, report.to_dict())
    print(f"synthesized: mode={gains.mode} q={gains.q} "
          f"controller order={gains.order} seed={report.seed_used}")
    print(f"max relative eigenvalue mismatch: {report.max_rel_mismatch:.3e}")
    print(f"gains written to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    sys, graph = fileio.load_system(args.system)
    gains, F = fileio.load_gains(args.gains)
    cl = assemble_closed_loop(sys, graph, F, gains)
    x0 = None
    if args.x0 is not None:
        x0 = fileio.parse_vector(args.x0, name="x0")
    state0 = initial_state(cl, x0=x0, seed=args.seed)
    trace = simulate_continuous(cl, state0, args.T, h=args.h)
    trace.to_csv(args.out)
    norms = trace.error_norms()
    print(f"simulated {len(trace.t)} samples over T={args.T}")
    print(f"stacked estimation error: start {norms[0]:.3e}, end {norms[-1]:.3e}")
    print(f"trace written to {args.out}")
    return 0


def cmd_setpoint(args) -> int:
    problem, rate = fileio.load_setpoint_scenario(args.scenario)
    if args.rate is not None:
        rate = args.rate
    cfg = SynthesisConfig(seed=args.seed)
    design = design_setpoint_controller(problem, args.q, rate=rate, config=cfg)
    trace, errors = evaluate_tracking(design, T=args.T, seed=args.seed)
    for i, err in enumerate(errors, start=1):
        print(f"channel {i}: |y_{i} - r_{i}| = {err:.3e}")
    if args.out is not None:
        trace.to_csv(args.out)
        print(f"trace written to {args.out}")
    if args.report is not None:
        fileio.save_json(args.report, {
            "q": args.q,
            "rate": rate,
            "tracking_errors": [float(e) for e in errors],
            "synthesis": design.report.to_dict(),
        })
    return 0


def cmd_delay_demo(args) -> int:
    scenario = None
    if args.scenario is not None:
        scenario = fileio.load_delay_scenario(args.scenario)
    else:
        scenario = fileio.load_delay_scenario()
    graph, _ = scenario
    qs = tuple(range(1, graph.m + 1))
    report = run_delay_demo(n=args.n, seed=args.seed, rho=args.rho,
                            steps=args.steps, qs=qs, scenario=scenario)
    for run in report.runs:
        status = "ok" if run["ok"] else "FAIL"
        print(f"q={run['q']}: lifted dim {run['lifted_dim']}, "
              f"decay {run['decay_rate']:.4f} vs bound {run['bound']:.4f}, "
              f"mismatch {run['max_rel_mismatch']:.2e} [{status}]")
    if args.out is not None:
        fileio.save_json(args.out, report.to_dict())
    if not report.ok:
        raise SynthesisError("delay demo failed its decay bound")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return ValidationError.exit_code
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=_sys.stderr)
        return SynthesisError.exit_code
    except NumericalError as exc:
        print(f"numerical breakdown: {exc}", file=_sys.stderr)
        return NumericalError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
