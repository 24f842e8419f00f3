"""``progfs`` command line: ``test``, ``simulate``, ``groupseq`` and ``plot``.

Exit codes: 0 success, 2 invalid input or arguments, 1 operational failure.
Every failure prints one line to stderr of the form
``progfs: error[<code>]: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from progfs import __version__
from progfs.errors import ArgumentError, NumericError, ProFSError
from progfs.groupseq import gs_boundaries_and_decide
from progfs.io import (
    RunManifest,
    load_design,
    load_scenarios,
    read_dataset_csv,
    write_csv,
    write_json,
)
from progfs.mvn import DEFAULT_ACCURACY
from progfs.profs import ExaminationSchedule, profs_test, quantile_schedule
from progfs.simulation import (
    default_workers,
    estimate_operating_characteristics,
    parse_tests,
    table2_scenarios,
    with_overrides,
)

SEED_ENV = "PROFS_SEED"
DEFAULT_SIM_SEED = 20240101
DEFAULT_TESTS = "fs,profs2,profs4,profs5,profs10"
TABLE2_TESTS = "profs2,profs4,profs5,profs10"

EXIT_OK = 0
EXIT_OPERATIONAL = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would print multi-line usage and exit; keep errors single-line
    def error(self, message):
        raise _UsageError(message)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _env_seed(fallback: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ArgumentError(f"{SEED_ENV}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="progfs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"progfs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="FS or ProFS test on a dataset CSV")
    t.add_argument("dataset", type=Path)
    sched = t.add_mutually_exclusive_group()
    sched.add_argument("--schedule", type=_float_list, help='explicit examination times "t1,t2,..."')
    sched.add_argument("--quantile", type=int, metavar="P", help="P quantile examinations")
    t.add_argument("--s-inf", type=float, default=0.0, help="earliest allowed examination")
    t.add_argument("--horizon", type=float, help="full follow-up S (default: largest observed time)")
    t.add_argument("--stratified", action="store_true")
    t.add_argument("--seed", type=int, help=f"MVN seed (default: ${SEED_ENV} or 0)")
    t.add_argument("--accuracy", type=float, default=DEFAULT_ACCURACY)
    t.add_argument("--out", type=Path, required=True, help="result JSON path")

    s = sub.add_parser("simulate", help="operating characteristics of simulated trials")
    s.add_argument("scenario", type=Path, nargs="?", help="scenario INI or JSON file")
    s.add_argument("--tests", help=f"comma-separated tests (default: {DEFAULT_TESTS})")
    s.add_argument("--paper-table2", action="store_true", help="run the 30-scenario examination-count grid")
    s.add_argument("--replicates", type=int)
    s.add_argument("--n-total", type=int)
    s.add_argument("--seed", type=int, help=f"simulation seed (default: scenario file, ${SEED_ENV}, {DEFAULT_SIM_SEED})")
    s.add_argument("--accuracy", type=float, default=DEFAULT_ACCURACY)
    s.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    s.add_argument("--keep-pvalues", action="store_true", help="also write per-replicate p-values")
    s.add_argument("--figures", action="store_true", help="render PNG figures into OUT/figures")
    s.add_argument("--out", type=Path, required=True, help="output directory")

    g = sub.add_parser("groupseq", help="group-sequential run over cohort CSVs")
    g.add_argument("design", type=Path)
    g.add_argument("cohorts", type=Path, nargs="+")
    g.add_argument("--draws", type=int, help="null draws V (overrides the design file)")
    g.add_argument("--seed", type=int, help=f"boundary seed (default: design file, ${SEED_ENV}, 0)")
    g.add_argument("--out", type=Path, required=True, help="trace JSON path")

    p = sub.add_parser("plot", help="render figures from a plot-data CSV")
    p.add_argument("plot_data", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _format_row(label: str, cells: Sequence[str], width: int = 12) -> str:
    return f"{label:<18}" + "".join(f"{c:>{width}}" for c in cells)


def _print_test_table(result) -> None:
    times = result.schedule.times
    p = len(times)
    name = "FS" if p == 1 else f"ProFS-{p}"
    print(_format_row("", [name]))
    stat = "R" if p == 1 else "Z_MAX"
    print(_format_row("Test statistic", [f"{stat}={result.z_max:.4f}"], 16))
    print(_format_row("p-value", [f"{result.p_value:.4g}"], 16))
    print(_format_row("Examination time", [f"S{k + 1}" for k in range(p)]))
    print(_format_row("Time (days)", [f"{t:g}" for t in times]))
    print(_format_row("R_k", [f"{r:.4f}" for r in result.r_vec]))


def cmd_test(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed(0)
    data = read_dataset_csv(args.dataset)
    horizon = args.horizon if args.horizon is not None else float(data.times.max())
    if not horizon > 0:
        raise ArgumentError(f"horizon must be > 0, got {horizon}")
    if args.schedule is not None:
        schedule = ExaminationSchedule(args.schedule, horizon, args.s_inf)
    elif args.quantile is not None:
        schedule = quantile_schedule(horizon, args.quantile, args.s_inf)
    else:
        schedule = ExaminationSchedule.single(horizon)
    # options are recorded in resolved form so equivalent invocations agree
    options = {
        "schedule": list(schedule.times),
        "horizon": horizon,
        "s_inf": schedule.floor,
        "stratified": args.stratified,
        "accuracy": args.accuracy,
    }
    manifest = RunManifest("test", [str(args.dataset)], options, seed)
    result = profs_test(data, schedule, accuracy=args.accuracy, seed=seed, stratified=args.stratified)
    doc = result.to_dict() | {
        "horizon": horizon,
        "N": data.N,
        "M": data.M,
        "layer_count": data.layer_count,
        "stratified": args.stratified,
        "seed": seed,
        "version": __version__,
        "manifest_sha256": manifest.digest(),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(doc, args.out)
    manifest.finish([args.out])
    write_json(manifest.to_dict(), _sidecar(args.out))
    _print_test_table(result)
    return EXIT_OK


def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".manifest.json")


def _table2_rows(tables) -> tuple[list[str], list[list]]:
    labels = [t.label for t in tables[0].tests]
    header = ["alpha_d", "alpha_h", "W", "S"] + labels
    rows = []
    for tab in tables:
        c = tab.config
        row = [c.meta.get("alpha_d"), c.meta.get("alpha_h"), c.meta.get("kendall_w"), c.follow_up]
        rows.append(row + [round(100.0 * tab.rate(lbl), 2) for lbl in labels])
    return header, rows


def cmd_simulate(args) -> int:
    if args.paper_table2 and args.scenario is not None:
        raise ArgumentError("give either a scenario file or --paper-table2, not both")
    if not args.paper_table2 and args.scenario is None:
        raise ArgumentError("a scenario file or --paper-table2 is required")
    if args.replicates is not None and args.replicates < 1:
        raise ArgumentError(f"replicates must be >= 1, got {args.replicates}")
    tests = parse_tests(args.tests or (TABLE2_TESTS if args.paper_table2 else DEFAULT_TESTS))
    default_seed = _env_seed(DEFAULT_SIM_SEED)
    if args.paper_table2:
        configs = table2_scenarios(args.replicates, seed=default_seed)
        inputs = []
    else:
        configs = load_scenarios(args.scenario, default_seed=default_seed)
        inputs = [str(args.scenario)]
    configs = [
        with_overrides(c, replicates=args.replicates, n_total=args.n_total, seed=args.seed) for c in configs
    ]
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ArgumentError(f"workers must be >= 1, got {workers}")

    options = {
        "tests": [t.label for t in tests],
        "paper_table2": args.paper_table2,
        "replicates": args.replicates,
        "n_total": args.n_total,
        "accuracy": args.accuracy,
        "scenarios": [c.name for c in configs],
        "seeds": sorted({c.seed for c in configs}),
    }
    manifest = RunManifest("simulate", inputs, options, configs[0].seed)
    digest = manifest.digest()

    started = time.perf_counter()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        tables = [
            estimate_operating_characteristics(
                c, tests, workers=workers, keep_p_values=args.keep_pvalues, accuracy=args.accuracy,
                decide=not args.keep_pvalues, pool=pool,
            )
            for c in configs
        ]
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - started

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    written = []
    result_rows = [
        [r.scenario, r.test, r.rejections, r.replicates, r.rate, r.ci_lo, r.ci_hi]
        for tab in tables
        for r in tab.rows
    ]
    header = ["scenario", "test", "rejections", "replicates", "rate", "ci_lo", "ci_hi"]
    write_csv(result_rows, header, out / "results.csv", digest)
    written.append(out / "results.csv")

    plot_rows = [
        {
            "scenario": tab.config.name,
            "family": tab.config.family or tab.config.name,
            "kendall_w": tab.config.kendall_w,
            "follow_up": tab.config.follow_up,
            "test": r.test,
            "power": r.rate,
        }
        for tab in tables
        for r in tab.rows
    ]
    plot_header = ["scenario", "family", "kendall_w", "follow_up", "test", "power"]
    write_csv([[d[k] for k in plot_header] for d in plot_rows], plot_header, out / "plot_data.csv", digest)
    written.append(out / "plot_data.csv")

    if args.paper_table2:
        t2_header, t2_rows = _table2_rows(tables)
        write_csv(t2_rows, t2_header, out / "table2.csv", digest)
        written.append(out / "table2.csv")

    if args.keep_pvalues:
        pv_rows = [
            [tab.config.name, rep] + list(tab.p_values[rep]) for tab in tables for rep in range(len(tab.p_values))
        ]
        write_csv(pv_rows, ["scenario", "replicate"] + [t.label for t in tests], out / "pvalues.csv", digest)
        written.append(out / "pvalues.csv")

    if args.figures:
        from progfs.plotting import render_report

        written += render_report(plot_rows, out, configs)

    manifest.finish(written)
    doc = manifest.to_dict() | {"workers": workers, "elapsed_seconds": round(elapsed, 3)}
    write_json(doc, out / "manifest.json")

    print(f"{'scenario':<34} {'test':>9} {'rate%':>9} {'ci_lo%':>9} {'ci_hi%':>9}")
    for r in (row for tab in tables for row in tab.rows):
        print(f"{r.scenario:<34} {r.test:>9} {100 * r.rate:9.2f} {100 * r.ci_lo:9.2f} {100 * r.ci_hi:9.2f}")
    print(f"wrote {len(written)} files to {out} in {elapsed:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_groupseq(args) -> int:
    design = load_design(args.design, default_seed=_env_seed(0))
    if args.draws is not None or args.seed is not None:
        from dataclasses import replace

        changes = {k: v for k, v in (("draws", args.draws), ("seed", args.seed)) if v is not None}
        design = replace(design, **changes)
    if len(args.cohorts) > design.looks:
        raise ArgumentError(f"design has {design.looks} looks but {len(args.cohorts)} cohorts were given")
    names = [p.name for p in args.cohorts]
    cohorts = [read_dataset_csv(p) for p in args.cohorts]
    options = {
        "looks": design.looks,
        "per_arm_increment": design.per_arm_increment,
        "stop_probs": list(design.stop_probs),
        "schedule": list(design.schedule.times),
        "horizon": design.schedule.horizon,
        "draws": design.draws,
    }
    manifest = RunManifest("groupseq", [str(args.design)] + [str(p) for p in args.cohorts], options, design.seed)
    state = gs_boundaries_and_decide(design, cohorts, names)
    looks = []
    for rec, name in zip(state.looks, names):
        looks.append(rec.to_dict() | {"cohort": name, "stop_prob": design.stop_probs[rec.look - 1]})
    doc = {
        "design": options | {"seed": design.seed},
        "looks": looks,
        "decision": state.decision,
        "stopped_at": state.stopped_at,
        "version": __version__,
        "manifest_sha256": manifest.digest(),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(doc, args.out)
    manifest.finish([args.out])
    write_json(manifest.to_dict(), _sidecar(args.out))
    for rec in state.looks:
        print(
            f"look {rec.look}: N={rec.cumulative_n} observed_max={rec.z_max:.4f} "
            f"boundary={rec.boundary:.4f} decision={rec.decision}"
        )
    return EXIT_OK


def cmd_plot(args) -> int:
    from progfs.plotting import read_plot_data, render_report

    try:
        rows = read_plot_data(args.plot_data)
    except (KeyError, ValueError) as exc:
        raise ArgumentError(f"{args.plot_data}: not a plot-data CSV ({exc})") from None
    for path in render_report(rows, args.out):
        print(path)
    return EXIT_OK


_COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "groupseq": cmd_groupseq, "plot": cmd_plot}


def _fail(code: str, message: str, status: int) -> int:
    one_line = " ".join(str(message).split())
    print(f"progfs: error[{code}]: {one_line}", file=sys.stderr)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except NumericError as exc:
        return _fail(exc.code, exc, EXIT_OPERATIONAL)
    except ProFSError as exc:
        return _fail(exc.code, exc, EXIT_USAGE)
    except ValueError as exc:
        return _fail("argument", exc, EXIT_USAGE)
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_OPERATIONAL)
    except KeyboardInterrupt:
        return _fail("interrupted", "interrupted", 130)


if __name__ == "__main__":
    sys.exit(main())
