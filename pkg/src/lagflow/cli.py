"""Command-line entry point: ``lagflow verify-conditions | solve | sweep-tau``.

Exit codes: 0 success, 1 a check failed or a flow did not converge,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np
import scipy

from . import __version__
from .analysis import graph_export
from .conditions import ConeRegion, NegatedOperator, report_json, verify_all
from .errors import ConfigError, DomainError, LagflowError, RegionError
from .operator import make_operator
from .solver import FlowConfig, _parse_tau, run_flow

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own; raising keeps main() in control of the exit path
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _tau_arg(text):
    try:
        tau = _parse_tau(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad tau {text!r}") from exc
    if not 0.0 <= tau <= math.pi / 2:
        raise argparse.ArgumentTypeError(f"tau={tau!r} outside [0, pi/2]")
    return tau


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LAGFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise _UsageError(f"LAGFLOW_THREADS must be an integer, got {env!r}") from exc
    return 1


def _versions():
    return {"lagflow": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": sys.version.split()[0]}


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


def _load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return raw, FlowConfig.from_dict(raw)


def cmd_verify_conditions(args):
    taus = args.tau or [math.pi / 6]
    threads = _threads(args)
    region = ConeRegion(args.mu1, args.mu2, args.n)
    results = []
    for tau in taus:
        op = make_operator(tau)
        if args.negate:
            op = NegatedOperator(op)
        results.append(verify_all(op, region, samples=args.samples, seed=args.seed, threads=threads))
    passed = all(r["passed"] for r in results)
    report = {"passed": passed, "results": results, "versions": _versions()}
    text = report_json(report)
    if args.out:
        _write(args.out, text)
    for r in results:
        failed = [k for k, c in r["checks"].items() if not c["passed"]]
        status = "PASS" if r["passed"] else "FAIL " + ",".join(failed)
        print(f"tau={r['operator']['tau']:.6g} n={args.n}: {status}")
    return EXIT_OK if passed else EXIT_FAIL


def _solve_one(config, out_dir):
    return run_flow(config, out_dir=out_dir if config.fields else None)


def cmd_solve(args):
    raw, config = _load_config(args.config)
    if args.threads is not None or os.environ.get("LAGFLOW_THREADS"):
        config.threads = _threads(args)
    out_dir = args.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    state, rep = _solve_one(config, out_dir)
    ok = rep.converged and rep.jacobian_min > 0
    report = {
        "report": rep.to_dict(),
        "config": config.to_dict(),
        "versions": _versions(),
        "success": ok,
    }
    if out_dir:
        _write(os.path.join(out_dir, "report.json"), report_json(report))
        _write(os.path.join(out_dir, "timing.json"), json.dumps({"wall_time": rep.wall_time}))
        graph_export(state, os.path.join(out_dir, "graph.csv"))
    print(report_json(rep.to_dict()))
    return EXIT_OK if ok else EXIT_FAIL


def _tau_grid(k):
    if k < 1:
        raise _UsageError("--grid needs k >= 1")
    if k == 1:
        return [math.pi / 2]
    taus = [float(v) for v in np.linspace(0.0, math.pi / 2, k)]
    taus[0], taus[-1] = 0.0, math.pi / 2
    # make sure pi/4 is hit exactly so the harmonic branch is selected
    if k % 2 == 1:
        taus[k // 2] = math.pi / 4
    else:
        taus.append(math.pi / 4)
        taus.sort()
    return taus


def cmd_sweep_tau(args):
    raw, base = _load_config(args.config)
    if args.taus is not None:
        items = [t for t in args.taus.split(",") if t.strip()]
        if not items:
            raise _UsageError("--taus is empty")
        try:
            taus = [_tau_arg(t) for t in items]
        except argparse.ArgumentTypeError as exc:
            raise _UsageError(str(exc)) from exc
    else:
        taus = _tau_grid(args.grid)
    threads = _threads(args)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    all_ok = True
    for tau in taus:
        cfg = FlowConfig.from_dict({**raw, "tau": tau})
        cfg.threads = threads
        try:
            _, rep = _solve_one(cfg, None)
            ok = rep.converged and rep.jacobian_min > 0
            rows.append([tau, rep.C_inf, rep.osc_ut, rep.residual_sup, rep.image_hausdorff, rep.steps, ok, ""])
        except LagflowError as exc:
            ok = False
            rows.append([tau, math.nan, math.nan, math.nan, math.nan, 0, False, type(exc).__name__])
        all_ok &= ok
        print(f"tau={tau:.6g} C_inf={rows[-1][1]:.10g} converged={ok}")
    path = os.path.join(out_dir, args.out or "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "C_inf", "osc_ut", "residual_sup", "image_hausdorff", "steps", "converged", "error"])
        for r in rows:
            w.writerow([f"{r[0]:.17g}", f"{r[1]:.17g}", f"{r[2]:.17g}", f"{r[3]:.17g}",
                        f"{r[4]:.17g}", r[5], r[6], r[7]])
    return EXIT_OK if all_ok else EXIT_FAIL


def build_parser():
    p = _Parser(prog="lagflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lagflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify-conditions", help="sampled checks of the structural hypotheses")
    v.add_argument("--tau", type=_tau_arg, action="append", help="angle in [0, pi/2]; repeatable; accepts 'pi/4'")
    v.add_argument("--n", type=int, default=2)
    v.add_argument("--mu1", type=float, default=1.0)
    v.add_argument("--mu2", type=float, default=2.0)
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--out", help="JSON report path")
    v.add_argument("--negate", action="store_true", help="negative control: check -F instead of F")
    v.add_argument("--threads", type=int)
    v.set_defaults(func=cmd_verify_conditions)

    s = sub.add_parser("solve", help="run the flow for one config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep-tau", help="one solve per tau on the same domain pair")
    w.add_argument("--config", required=True)
    g = w.add_mutually_exclusive_group(required=True)
    g.add_argument("--taus", help="comma-separated list, e.g. '0,pi/4,1.2'")
    g.add_argument("--grid", type=int, help="k angles across [0, pi/2] including 0, pi/4, pi/2")
    w.add_argument("--out-dir")
    w.add_argument("--out", help="CSV file name inside --out-dir (default sweep.csv)")
    w.add_argument("--threads", type=int)
    w.set_defaults(func=cmd_sweep_tau)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "samples", 1) < 1 or getattr(args, "n", 1) < 1:
            raise _UsageError("--samples and --n must be positive")
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise _UsageError("--threads must be >= 1")
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, RegionError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LagflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
