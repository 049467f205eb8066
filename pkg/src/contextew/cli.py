"""Command line: run, sample-test, mgr-test, z-eval, diagnose.

Exit codes: 0 success, 1 a check failed, 2 bad usage or unreadable config.
"""
import argparse
import sys
from dataclasses import replace

import numpy as np

from . import harness
from ._backend import COMPILED
from .core import ConfigError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _costs(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"costs must be comma-separated numbers: {exc}") from exc


def build_parser():
    p = _Parser(prog="contextew", description="Contextual exponential-weights bandit simulator.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a config file and write CSVs")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="override [run] output")
    r.add_argument("--replications", type=int, help="override [run] replications")
    r.add_argument("--seed", type=int, help="override [run] seed")
    r.add_argument("--workers", type=int,
                   help=f"worker processes (default: [run] workers, then ${harness.WORKERS_ENV}, then 1)")

    s = sub.add_parser("sample-test", help="statistical self-tests of the exact sampler")
    s.add_argument("--k", default="2,3,4", help="comma-separated arm counts")
    s.add_argument("--vectors", type=int, default=10)
    s.add_argument("--draws", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=2024)
    s.add_argument("--no-hit-and-run", action="store_true")

    m = sub.add_parser("mgr-test", help="MGR property checks on the exact uniform-ball instance")
    m.add_argument("--d", type=int, default=2)
    m.add_argument("--k", type=int, default=2)
    m.add_argument("--epsilon", type=float, default=0.1)
    m.add_argument("--repeats", type=int, default=4000)
    m.add_argument("--seed", type=int, default=7)

    z = sub.add_parser("z-eval", help="normalizing constant for a cost vector")
    z.add_argument("--costs", type=_costs, required=True)

    g = sub.add_parser("diagnose", help="ghost identity and sandwich checks on a frozen round")
    g.add_argument("--config", required=True)
    g.add_argument("--rounds", type=int, default=200)
    g.add_argument("--mc", type=int, default=20_000)
    g.add_argument("--samples", type=int, default=20_000)
    g.add_argument("--bias-samples", help="comma-separated S values: report estimator bias per S")
    return p


def _report(results):
    for res in results:
        print(res.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_run(args):
    cfg = harness.load_config(args.config)
    changes = {k: getattr(args, k) for k in ("output", "replications", "seed")
               if getattr(args, k) is not None}
    if changes:
        cfg = replace(cfg, **changes)
    traces = harness.run(cfg, workers=args.workers)
    for label, t, n, mean, std, *_ in harness.summarize_traces(traces, cfg.dims.T):
        print(f"{label:>4} t={t:<7d} mean regret {mean:12.4f}  std {std:10.4f}  (n={n})")
    print(f"wrote {cfg.replications} replication CSVs and summary.csv to {cfg.output}")
    return 0


def _cmd_z_eval(args):
    if len(args.costs) < 2:
        print("z-eval: need at least two costs", file=sys.stderr)
        return 2
    out = harness.z_eval(args.costs)
    print(f"Z = {out['Z']:.10g}")
    print(f"stable fallback used: {out['fallback']}")
    print(f"reduced costs shift: {out['shift']:.10g}")
    for grp in out["table"].groups:
        coeffs = ", ".join(f"{c:.10g}" for c in grp.coefficients)
        print(f"  pole {grp.cost:.10g}  multiplicity {grp.multiplicity}  coefficients [{coeffs}]")
    print(f"quadrature Z = {out['Z_quadrature']:.10g}  relative error {out['rel_error']:.3e}  "
          f"{'PASS' if out['pass'] else 'FAIL'}")
    return 0 if out["pass"] else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "z-eval":
            return _cmd_z_eval(args)
        if args.command == "sample-test":
            Ks = tuple(int(k) for k in args.k.split(","))
            print(f"compiled kernels: {COMPILED}")
            return _report(harness.sample_test(Ks, args.vectors, args.draws, args.seed,
                                               hr=not args.no_hit_and_run))
        if args.command == "mgr-test":
            return _report(harness.mgr_test(args.d, args.k, args.epsilon, args.repeats, seed=args.seed))
        if args.command == "diagnose":
            cfg = harness.load_config(args.config)
            code = _report(harness.diagnose(cfg, args.rounds, args.mc, args.samples))
            if args.bias_samples:
                S_values = [int(v) for v in args.bias_samples.split(",")]
                print(f"{'S':>9s} {'max |bias|':>12s} {'max |bias|/SE':>14s}")
                for S, b, z in harness.bias_by_samples(cfg, S_values, args.rounds, args.mc):
                    print(f"{S:9d} {b:12.5f} {z:14.2f}")
            return code
    except ConfigError as exc:
        print(f"contextew: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
