"""Command-line interface.

Subcommands: ``simulate``, ``restore``, ``sweep``, ``bench``, ``trace``.
Results go to stdout as one JSON object (or CSV where noted); diagnostics
go to stderr.

Exit codes: 0 success, 2 usage, 3 I/O, 4 outer loop hit ``--max-iters``,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .bench import SweepSpec, bench_to_csv, default_grid, lambda_sweep, run_table, simulate_observation, sweep_to_csv
from .bregman import SolverConfig, SolverError, restore, trace_to_csv
from .image_core import ImageFormatError, load_image, relative_error, save_image
from .noise_model import DEFAULT_CLAMP_FLOOR, SpeckleModel, to_log
from .tv import ChambolleConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4
EXIT_NUMERIC = 5

log = logging.getLogger("speckletv")


class UsageError(Exception):
    pass


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _float_list(text: str) -> list[float]:
    return [_positive_float(t) for t in text.split(",") if t.strip()]


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _solver_config(args, lam: float) -> SolverConfig:
    return SolverConfig(
        lam=lam,
        tau=args.tau,
        inner_iters=args.inner_iters,
        newton_iters=args.newton_iters,
        chambolle=ChambolleConfig(max_iters=args.chambolle_iters),
        stop_tol=args.stop_tol,
        max_outer=args.max_iters,
        init_mode=args.init,
    )


def _sweep_spec(args, looks: float) -> SweepSpec:
    if args.lambdas:
        grid = tuple(args.lambdas)
    elif args.lambda_min is not None or args.lambda_max is not None:
        if args.lambda_min is None or args.lambda_max is None:
            raise UsageError("--lambda-min and --lambda-max must be given together")
        return SweepSpec.logspace(args.lambda_min, args.lambda_max, args.count, refine=not args.no_refine)
    else:
        grid = default_grid(looks, count=args.count)
    return SweepSpec(grid, refine=not args.no_refine)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    x = load_image(args.input, args.format)
    y = simulate_observation(x, args.looks, args.seed, args.threads)
    if args.clamp_floor is not None:
        y = np.maximum(y, args.clamp_floor)
    save_image(y, args.output, args.out_format, maxval=args.maxval)
    _emit({"output": args.output, "looks": args.looks, "seed": args.seed, "mean_ratio": float(y.mean() / x.mean())})
    return EXIT_OK


def cmd_restore(args) -> int:
    y = load_image(args.input, args.format)
    model = SpeckleModel(args.looks)
    cfg = _solver_config(args, args.lam)

    def progress(row):
        if args.verbose:
            print(f"iter {row.iter} objective {row.objective:.6e} constraint {row.constraint_sq:.3e} "
                  f"change {row.rel_change:.3e}", file=sys.stderr)

    res = restore(to_log(y, args.clamp_floor), model, cfg, threads=args.threads, callback=progress)
    save_image(res.x_hat, args.output, args.out_format, maxval=args.maxval)
    if args.trace:
        _write_text(args.trace, trace_to_csv(res.trace))
    summary = {"output": args.output, "iterations": res.iterations, "converged": res.converged,
               "lambda": cfg.lam, "tau": cfg.tau_value}
    if args.clean:
        summary["err"] = relative_error(res.x_hat, load_image(args.clean, args.format))
    _emit(summary)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _clean_and_noisy(args):
    x = load_image(args.clean, args.format)
    if args.noisy:
        y = load_image(args.noisy, args.format)
    elif args.seed is not None:
        y = simulate_observation(x, args.looks, args.seed, args.threads)
    else:
        raise UsageError("give --noisy or --seed")
    return x, y


def cmd_sweep(args) -> int:
    x, y = _clean_and_noisy(args)
    model = SpeckleModel(args.looks)
    spec = _sweep_spec(args, model.looks)
    res = lambda_sweep(x, y, model, _solver_config(args, spec.grid[0]), spec,
                       seed=-1 if args.seed is None else args.seed, threads=args.threads,
                       clamp_floor=args.clamp_floor)
    if args.output:
        _write_text(args.output, sweep_to_csv(res.points))
    _emit({"lambda": res.best_lam, "err": res.best.err, "iterations": res.best.iters,
           "evaluated": len(res.points)})
    return EXIT_OK


def cmd_bench(args) -> int:
    images = []
    for item in args.image or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(item))[0], item
        images.append((name, path))
    explicit = args.lambdas or args.lambda_min is not None or args.lambda_max is not None
    spec = _sweep_spec(args, 1.0) if explicit else None
    rows = run_table(images, args.looks or [], args.seed or [0], spec, _solver_config(args, 1.0),
                     threads=args.threads, record_time=not args.no_timing, refine=not args.no_refine)
    _write_text(args.output, bench_to_csv(rows))
    return EXIT_OK


def cmd_trace(args) -> int:
    x, y = _clean_and_noisy(args)
    model = SpeckleModel(args.looks)
    if args.lam is not None:
        lam = args.lam
    else:
        spec = _sweep_spec(args, model.looks)
        lam = lambda_sweep(x, y, model, _solver_config(args, 1.0), spec, threads=args.threads,
                           clamp_floor=args.clamp_floor).best_lam
    res = restore(to_log(y, args.clamp_floor), model, _solver_config(args, lam), threads=args.threads)
    _write_text(args.output, trace_to_csv(res.trace))
    first, last = res.trace[0], res.trace[-1]
    summary = {"lambda": lam, "iterations": res.iterations, "converged": res.converged,
               "err": relative_error(res.x_hat, x),
               "constraint_ratio": last.constraint_sq / first.constraint_sq if first.constraint_sq else 0.0}
    if args.output not in (None, "-"):
        _emit(summary)
    else:
        print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--format", choices=("pgm", "rawf64"), help="input format (default: from extension)")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads; results do not depend on it (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="per-iteration log on stderr")


def _add_output_format(p):
    p.add_argument("--out-format", choices=("pgm", "rawf64"), help="output format (default: from extension)")
    p.add_argument("--maxval", type=int, default=255, help="PGM output maxval (default 255)")


def _add_solver(p):
    p.add_argument("--tau", type=_positive_float, default=None, help="splitting weight (default 2*lambda)")
    p.add_argument("--init", choices=("observation", "zeros"), default="observation")
    p.add_argument("--max-iters", type=_positive_int, default=2000, help="outer iteration cap")
    p.add_argument("--stop-tol", type=_positive_float, default=1e-4)
    p.add_argument("--inner-iters", type=_positive_int, default=1)
    p.add_argument("--newton-iters", type=_positive_int, default=4)
    p.add_argument("--chambolle-iters", type=_positive_int, default=10)
    p.add_argument("--clamp-floor", type=_positive_float, default=DEFAULT_CLAMP_FLOOR)


def _add_grid(p):
    p.add_argument("--lambdas", type=_float_list, help="comma-separated lambda grid")
    p.add_argument("--lambda-min", type=_positive_float)
    p.add_argument("--lambda-max", type=_positive_float)
    p.add_argument("--count", type=_positive_int, default=15, help="grid size (default 15)")
    p.add_argument("--no-refine", action="store_true", help="skip golden-section refinement")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speckletv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="multiply an image by Gamma speckle")
    p.add_argument("--input", required=True)
    p.add_argument("--looks", type=_positive_float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--clamp-floor", type=_positive_float, default=None,
                   help="lower bound applied to the speckled output")
    _add_common(p)
    _add_output_format(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("restore", help="TV restoration of a speckled image")
    p.add_argument("--input", required=True)
    p.add_argument("--looks", type=_positive_float, required=True)
    p.add_argument("--lambda", dest="lam", type=_positive_float, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--trace", help="write per-iteration CSV here")
    p.add_argument("--clean", help="clean reference; adds err to the summary")
    _add_solver(p)
    _add_common(p)
    _add_output_format(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("sweep", help="oracle lambda search against a clean image")
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy", help="speckled observation (else simulated with --seed)")
    p.add_argument("--seed", type=int)
    p.add_argument("--looks", type=_positive_float, required=True)
    p.add_argument("--output", help="CSV of every evaluated lambda")
    _add_grid(p)
    _add_solver(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="swept results per (image, M, seed) as CSV")
    p.add_argument("--image", action="append", help="NAME=PATH or PATH; repeatable")
    p.add_argument("--looks", type=_positive_float, action="append")
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--output", default="-", help="CSV destination (default stdout)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")
    _add_grid(p)
    _add_solver(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", help="per-iteration objective and constraint for one run")
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy")
    p.add_argument("--seed", type=int)
    p.add_argument("--looks", type=_positive_float, required=True)
    p.add_argument("--lambda", dest="lam", type=_positive_float, help="skip the sweep and use this value")
    p.add_argument("--output", default="-", help="trace CSV destination (default stdout)")
    _add_grid(p)
    _add_solver(p)
    _add_common(p)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ImageFormatError) as exc:
        print(f"speckletv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, ArithmeticError) as exc:
        print(f"speckletv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"speckletv: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
