"""Command line entry point: ``mlis estimate`` and ``mlis bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .bench import (METHODS, MULTILEVEL, ConfigError, load_config, run_benchmark, run_method,
                    write_csv)


def _fmt_lam(lam):
    if lam is None:
        return "-"
    lam = np.atleast_1d(lam)
    shown = ", ".join(f"{x:+.4f}" for x in lam[:4])
    return f"[{shown}{', ...' if lam.size > 4 else ''}]"


def print_result(result, out=None):
    out = sys.stdout if out is None else out
    print(f"method          {result.method}", file=out)
    print(f"estimate        {result.estimate:.6f}", file=out)
    print(f"variance        {result.variance:.6e}", file=out)
    print(f"95% half-width  {result.half_width:.6f}", file=out)
    print(f"time opt/est    {result.time_optimization:.3f}s / {result.time_estimation:.3f}s",
          file=out)
    print("level  N        N'       iters  mean          lambda", file=out)
    for s in result.levels:
        flag = " (degenerate)" if s.degenerate else ""
        print(f"{s.level:<6d} {s.samples:<8d} {s.opt_samples:<8d} {s.iterations:<6d} "
              f"{s.mean:<13.6g} {_fmt_lam(s.lam)}{flag}", file=out)


def cmd_estimate(args, config):
    method = args.method or config.methods[-1]
    if method in MULTILEVEL:
        knob = args.levels
    else:
        knob = args.steps
    if knob is None:
        if method not in config.ladder:
            flag = "--levels" if method in MULTILEVEL else "--steps"
            raise ConfigError(f"no ladder entry for {method}; pass {flag}")
        knob = config.ladder[method][-1]
    seed = config.seed if args.seed is None else args.seed
    result = run_method(config, method, knob, seed, workers=args.workers or config.workers,
                        deterministic=config.deterministic if args.deterministic is None
                        else args.deterministic)
    print_result(result)
    return 0


def cmd_bench(args, config):
    report = run_benchmark(config, workers=args.workers)
    output = args.output or config.output
    if output:
        write_csv(report.rows, output)
        print(f"wrote {len(report.rows)} rows to {output}", file=sys.stderr)
    else:
        write_csv(report.rows, sys.stdout)
    ref = report.reference
    print(f"reference ({ref.mode}) {ref.value:.6f} +/- {ref.half_width:.2e}", file=sys.stderr)
    for msg in report.warnings + report.failures:
        print(f"warning: {msg}", file=sys.stderr)
    return 1 if report.failures else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mlis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="TOML configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--workers", type=int, help="worker count")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="reduce sample blocks in a fixed order")
    common.add_argument("-v", "--verbose", action="store_true")

    est = sub.add_parser("estimate", parents=[common], help="run one estimator once")
    est.add_argument("--method", choices=METHODS)
    est.add_argument("--levels", type=int, metavar="L", help="finest level (mlmc, mlis)")
    est.add_argument("--steps", type=int, metavar="N", help="time steps (mc, mc-is)")

    bench = sub.add_parser("bench", parents=[common], help="run the RMSE benchmark")
    bench.add_argument("--output", metavar="PATH", help="CSV destination (default stdout)")
    bench.add_argument("--method", choices=METHODS, action="append",
                       help="restrict to these methods (repeatable)")
    bench.add_argument("--levels", type=int, action="append", metavar="L",
                       help="replace the multilevel ladders (repeatable)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.command == "bench":
            if args.method:
                unknown = [m for m in args.method if m not in config.ladder and
                           not (m in MULTILEVEL and args.levels)]
                if unknown:
                    raise ConfigError(f"no ladder for method(s) {unknown}")
                config = replace(config, methods=tuple(args.method))
            if args.levels:
                ladder = dict(config.ladder)
                for m in MULTILEVEL:
                    if m in config.methods:
                        ladder[m] = tuple(args.levels)
                config = replace(config, ladder=ladder)
            if args.deterministic is not None:
                config = replace(config, deterministic=args.deterministic)
            return cmd_bench(args, config)
        return cmd_estimate(args, config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
