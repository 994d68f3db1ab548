"""Reproduce the Monte Carlo convergence scenarios and write JSON/CSV reports.

    python3 scripts/run_convergence.py --out results/ [--only strong weak ...] [--scale 0.1]

``--scale`` multiplies every path count (handy for a quick smoke run).
Worker processes follow MSSDE_THREADS.
"""

import argparse
import logging
from pathlib import Path

from mssde.experiments import ScenarioConfig, run_experiment
from mssde.report import emit_report

SCENARIOS = {
    "strong_closed_form": dict(model="example_2_9", eps=[0.05], h=2**-10, n_paths=200_000,
                               seed=4),
    "strong": dict(model="example_2_9", eps=[2.0**-k for k in range(4, 9)], n_paths=100_000,
                   seed=7),
    "strong_sup_cubic": dict(model="cubic", eps=[2.0**-k for k in range(3, 8)],
                             kind="strong_sup", h=2**-8, n_paths=20_000, seed=11),
    "weak": dict(model="example_2_11", eps=[0.4, 0.2, 0.1, 0.05], kind="weak", h=2**-5,
                 n_paths=1_000_000, seed=6),
    "clt_mean": dict(model="example_2_9", eps=[2.0**-k for k in range(4, 9)], kind="clt_weak",
                     h=2**-5, n_paths=200_000, seed=72),
    "clt_second": dict(model="example_2_9", eps=[2.0**-k for k in range(2, 6)],
                       kind="clt_weak", test_function="square", h=2**-5, n_paths=1_000_000,
                       seed=73),
    "negative_control": dict(model="remark_5_4", eps=[0.2, 0.1, 0.05, 0.025], n_paths=100_000,
                             seed=8, allow_uncoupled_check=True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="+", choices=sorted(SCENARIOS))
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.only or SCENARIOS:
        kw = dict(SCENARIOS[name])
        kw["n_paths"] = max(100, int(kw["n_paths"] * args.scale))
        report = run_experiment(ScenarioConfig(**kw))
        (out / f"{name}.json").write_bytes(emit_report(report, "json"))
        (out / f"{name}.csv").write_bytes(emit_report(report, "csv"))
        fit = "" if report.slope is None else f" slope={report.slope:.3f} r2={report.r2:.3f}"
        logging.info("%-18s%s", name, fit)
        for e in report.estimates:
            ref = "" if e.reference is None else f" ref={e.reference:.5g}"
            logging.info("    eps=%-10.5g est=%.5g se=%.2g%s", e.eps, e.estimate, e.std_err, ref)


if __name__ == "__main__":
    main()
