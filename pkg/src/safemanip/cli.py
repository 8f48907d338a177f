"""Command-line front end.

Subcommands::

    safemanip run SCENARIO [-o DIR] [--set section.key=value ...]
    safemanip compare SCENARIO_A SCENARIO_B [-o DIR] [--set ...]
    safemanip bench SCENARIO [-o DIR] [--methods ...] [--horizons ...]
    safemanip validate [-o DIR]

Exit codes are a contract: 0 on success, 1 on configuration errors (bad
paths, malformed scenarios, bad overrides), 2 when the planner aborts beyond
its fallback budget.  Nothing is written to stderr on success; diagnostics go
to stdout.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import yaml

from . import validate as validate_mod
from .scenario import ScenarioError, apply_overrides, scenario_from_dict
from .sim import SolverAbort, bench_planner, compare_runs, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors, hence exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="safemanip",
                     description="Closed-loop manipulator safety pipeline")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("-o", "--output", default="out",
                       help="output directory (default: out)")
    p_run.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="override a scenario field, e.g. planner.N=10")

    p_cmp = sub.add_parser("compare", help="run two scenarios and diff them")
    p_cmp.add_argument("scenario_a")
    p_cmp.add_argument("scenario_b")
    p_cmp.add_argument("-o", "--output", default="out")
    p_cmp.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="override applied to both scenarios")

    p_bench = sub.add_parser("bench",
                             help="shooting-method/horizon solve-time table")
    p_bench.add_argument("scenario")
    p_bench.add_argument("-o", "--output", default="out")
    p_bench.add_argument("--methods", default="multiple,single",
                         help="comma-separated (default: multiple,single)")
    p_bench.add_argument("--horizons", default="10,30,50",
                         help="comma-separated node counts (default: 10,30,50)")
    p_bench.add_argument("--cycles", type=int, default=20,
                         help="planning cycles per combination (default: 20)")
    p_bench.add_argument("--repeats", type=int, default=1)
    p_bench.add_argument("--set", dest="overrides", action="append",
                         default=[], metavar="KEY=VALUE")

    p_val = sub.add_parser("validate", help="run the model property suites")
    p_val.add_argument("-o", "--output", default=None,
                       help="also write the summary into this directory")
    return parser


def _load(path: str, overrides):
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: invalid YAML ({exc})")
    if overrides:
        doc = apply_overrides(doc, overrides)
    try:
        return scenario_from_dict(doc, base_dir=p.parent, label=p.stem)
    except ScenarioError as exc:
        raise ScenarioError(f"{p}: {exc}") from None


def _cmd_run(args) -> int:
    scenario = _load(args.scenario, args.overrides)
    out = Path(args.output)
    try:
        report = run(scenario, out_dir=out)
    except SolverAbort as exc:
        report = exc.report
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.as_text())
        print(report.as_text(), end="")
        return EXIT_SOLVER
    (out / "report.txt").write_text(report.as_text())
    print(report.as_text(), end="")
    return EXIT_OK


def _cmd_compare(args) -> int:
    sa = _load(args.scenario_a, args.overrides)
    sb = _load(args.scenario_b, args.overrides)
    out = Path(args.output)
    code = EXIT_OK
    reports = []
    for tag, sc in (("a", sa), ("b", sb)):
        try:
            rep = run(sc, out_dir=out / tag)
        except SolverAbort as exc:
            rep = exc.report
            code = EXIT_SOLVER
        (out / tag / "report.txt").write_text(rep.as_text())
        reports.append(rep)
    cmp = compare_runs(reports[0], reports[1])
    lines = [f"compare: {sa.name} (a) vs {sb.name} (b), deltas are a - b"]
    for t, d in zip(cmp.waypoint_times, cmp.waypoint_error_delta):
        lines.append(f"waypoint t={t:.2f} s: ee error delta {d:+.5f}")
    lines.append("clearance delta per link: "
                 + ", ".join(f"{d:+.4f}" for d in cmp.clearance_delta_per_link))
    lines.append(f"min clearance delta: {cmp.min_clearance_delta:+.4f} m")
    lines.append(f"ee error rms delta: {cmp.ee_error_rms_delta:+.5f}")
    lines.append(f"solve time mean delta: "
                 f"{1e3 * cmp.solve_time_mean_delta:+.2f} ms")
    text = "\n".join(lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.txt").write_text(text)
    print(text, end="")
    return code


def _cmd_bench(args) -> int:
    scenario = _load(args.scenario, args.overrides)
    try:
        methods = tuple(s.strip() for s in args.methods.split(",") if s.strip())
        horizons = tuple(int(s) for s in args.horizons.split(",") if s.strip())
    except ValueError as exc:
        raise ScenarioError(f"bad bench arguments: {exc}")
    rows = bench_planner(scenario, methods=methods, horizons=horizons,
                         cycles=args.cycles, repeats=args.repeats)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "mean_ms", "p95_ms", "iterations"])
        for r in rows:
            w.writerow([r.method, r.horizon, f"{r.mean_ms:.3f}",
                        f"{r.p95_ms:.3f}", r.iterations])
    print(f"{'method':<10} {'N':>4} {'mean_ms':>9} {'p95_ms':>9} {'iters':>7}")
    for r in rows:
        print(f"{r.method:<10} {r.horizon:>4} {r.mean_ms:>9.3f} "
              f"{r.p95_ms:>9.3f} {r.iterations:>7}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    results = validate_mod.run_suites()
    text = validate_mod.summarize(results) + "\n"
    if args.output is not None:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validate.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CONFIG


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO,
             logging.DEBUG)[min(args.verbose, 2)]
    # stdout keeps the error stream silent on successful runs
    logging.basicConfig(level=level, stream=sys.stdout,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_validate(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
