"""Command-line interface: ``mssde {validate,poisson,average,simulate,converge}``.

Models are given as a builtin id (example_2_9, example_2_11, remark_5_4,
cubic) or a path to a JSON model spec.  Exit status is 0 on success, 2 when a
convergence hypothesis is violated and 1 on any other failure (including
unknown flags).  ``MSSDE_THREADS`` caps the number of worker processes.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .averaging import AveragedModel, CenteredDrift
from .chain import validate_generator
from .errors import HypothesisError, MssdeError
from .experiments import KINDS, TEST_FUNCTIONS, ScenarioConfig, run_experiment, worker_count
from .hybrid import TimeGrid, coupled_deviation, simulate_two_scale
from .modelspec import load_model, model_document, model_from_document, probe_points
from .poisson import solve_poisson
from .report import emit_report, format_float, write_path_dump

log = logging.getLogger("mssde")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_eps(text):
    """``2^-4..2^-8``, ``0.1,0.05`` or a mix of ``a^b`` and decimal items."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\^(-?\d+)\s*\.\.\s*(\d+(?:\.\d+)?)\^(-?\d+)\s*", text)
    if m:
        base, lo, base2, hi = float(m[1]), int(m[2]), float(m[3]), int(m[4])
        if base != base2:
            raise ValueError(f"eps range {text!r} mixes bases")
        step = 1 if hi >= lo else -1
        return [base**k for k in range(lo, hi + step, step)]
    out = []
    for item in text.split(","):
        item = item.strip()
        if "^" in item:
            b, e = item.split("^")
            out.append(float(b) ** int(e))
        else:
            out.append(float(item))
    return out


def _fmt_vec(v):
    return "(" + ", ".join(format(float(x), ".12g") for x in np.ravel(v)) + ")"


def _point(args, model):
    x = np.asarray(args.x if args.x is not None else [0.0] * model.n, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"--x needs {model.n} values")
    return x


def cmd_validate(args):
    doc = model_document(args.model)
    model = model_from_document(doc, validate=False)
    report = validate_generator(model.generator, probe_points(doc))
    out = report.to_dict()
    out["sigma_switch_independent"] = model.sigma_switch_independent
    out["clamp_events"] = model.generator.clamp_events
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0 if report.valid else 1


def cmd_poisson(args):
    model = load_model(args.model)
    x = _point(args, model)
    Q = model.generator.evaluate(x)
    F = CenteredDrift(model).evaluate(x)
    sol = solve_poisson(Q, F, x=x)
    for l in range(model.n):
        print(f"Phi[{l}]={_fmt_vec(sol.phi[:, l])}")
    print(f"residual={sol.residual:.3e}")
    print(f"centering={sol.centering:.3e}")
    return 0


def cmd_average(args):
    model = load_model(args.model)
    avg = AveragedModel(model)
    x = _point(args, model)
    print(f"mu={_fmt_vec(avg.mu(x))}")
    print(f"b_bar={_fmt_vec(avg.drift(x))}")
    print(f"sigma_bar={_fmt_vec(avg.diffusion(x))}")
    print(f"Theta={_fmt_vec(avg.theta(x))}")
    print(f"grad_b_bar={_fmt_vec(avg.drift_gradient(x))}")
    print(f"sigma_switch_independent={model.sigma_switch_independent}")
    return 0


def cmd_simulate(args):
    model = load_model(args.model)
    grid = TimeGrid(args.T, args.h)
    rng = np.random.default_rng(args.seed)
    x0 = np.asarray(args.x0 if args.x0 is not None else [0.0] * model.n, dtype=float)
    if args.coupled:
        cp = coupled_deviation(model, AveragedModel(model), args.eps, x0, args.alpha0, grid, rng,
                               allow_switching_sigma=args.allow_uncoupled_check)
        path = cp.path
        print(f"X_bar_T={_fmt_vec(cp.Xbar[-1])}")
        print(f"Z_eps_T={_fmt_vec(cp.Z_eps[-1])}")
    else:
        path = simulate_two_scale(model, args.eps, x0, args.alpha0, grid, rng)
    print(f"X_T={_fmt_vec(path.X[-1])}")
    print(f"jumps={path.jumps}")
    if args.dump:
        alpha = [args.alpha0] + [seg.final_state for seg in path.alpha]
        with open(args.dump, "wb") as fh:
            write_path_dump(fh, grid, path.X, alpha, args.eps, args.seed, model.d, model.m0)
    return 0


def _config_from_args(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if args.allow_uncoupled_check:
            doc["allow_uncoupled_check"] = True
        return ScenarioConfig.from_dict(doc)
    if args.model is None or args.eps is None:
        raise ValueError("converge needs --model and --eps (or --config)")
    return ScenarioConfig(
        model=args.model, eps=parse_eps(args.eps), kind=args.kind, T=args.T, h=args.h,
        n_paths=args.paths, seed=args.seed, test_function=args.phi, p=args.p,
        x0=args.x0, alpha0=args.alpha0, batch_size=args.batch_size, limit=args.limit,
        allow_uncoupled_check=args.allow_uncoupled_check)


def cmd_converge(args):
    config = _config_from_args(args)
    log.info("running %s on %s with %d workers", config.kind, config.model, worker_count())
    report = run_experiment(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".json").write_bytes(emit_report(report, "json", timing=args.timing))
    out.with_suffix(".csv").write_bytes(emit_report(report, "csv", timing=args.timing))
    print("epsilon,estimate,std_err,reference")
    for e in report.estimates:
        ref = "" if e.reference is None else format(e.reference, ".6g")
        print(f"{e.eps:.6g},{e.estimate:.6g},{e.std_err:.3g},{ref}")
    if report.slope is not None:
        print(f"slope={report.slope:.4f} intercept={report.intercept:.4f} r2={report.r2:.4f}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"wrote {out.with_suffix('.json')} and {out.with_suffix('.csv')}")
    return 0


def build_parser():
    p = _Parser(prog="mssde", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_arg(sp, required=True):
        sp.add_argument("--model", required=required,
                        help="builtin id or path to a JSON model spec")

    sp = sub.add_parser("validate", help="check generator conditions on the model's probe box")
    model_arg(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("poisson", help="solve the Poisson equation for F = b - b_bar at x")
    model_arg(sp)
    sp.add_argument("--x", type=float, nargs="+", help="evaluation point (default 0)")
    sp.set_defaults(func=cmd_poisson)

    sp = sub.add_parser("average", help="print averaged and deviation coefficients at x")
    model_arg(sp)
    sp.add_argument("--x", type=float, nargs="+", help="evaluation point (default 0)")
    sp.set_defaults(func=cmd_average)

    sp = sub.add_parser("simulate", help="simulate one two-scale path")
    model_arg(sp)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--h", type=float, default=2.0**-8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--x0", type=float, nargs="+")
    sp.add_argument("--alpha0", type=int, default=0)
    sp.add_argument("--coupled", action="store_true",
                    help="also simulate the averaged path on the same noise")
    sp.add_argument("--allow-uncoupled-check", action="store_true",
                    help="permit the coupled comparison for a switching sigma")
    sp.add_argument("--dump", help="write the path to this binary file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("converge", help="Monte Carlo error estimates and order fit")
    model_arg(sp, required=False)
    sp.add_argument("--config", help="JSON scenario config (overrides the flags below)")
    sp.add_argument("--kind", choices=KINDS, default="strong_fixed_t")
    sp.add_argument("--eps", help="e.g. 2^-4..2^-8 or 0.1,0.05")
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--h", type=float, default=2.0**-8)
    sp.add_argument("--phi", choices=TEST_FUNCTIONS, default="identity")
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--x0", type=float, nargs="+")
    sp.add_argument("--alpha0", type=int, default=0)
    sp.add_argument("--batch-size", type=int, default=8192)
    sp.add_argument("--limit", choices=("auto", "simulate", "closed_form"), default="auto")
    sp.add_argument("--allow-uncoupled-check", action="store_true",
                    help="measure the coupled strong error even when sigma switches")
    sp.add_argument("--timing", action="store_true",
                    help="include wall-clock seconds in the written reports")
    sp.add_argument("--out", default="report", help="output path prefix for .json and .csv")
    sp.set_defaults(func=cmd_converge)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HypothesisError as exc:
        print(f"mssde: hypothesis violated: {exc}", file=sys.stderr)
        print("mssde: rerun with --allow-uncoupled-check to measure the coupled error anyway",
              file=sys.stderr)
        return 2
    except (MssdeError, ValueError, OSError) as exc:
        print(f"mssde: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
