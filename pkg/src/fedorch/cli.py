"""Command line entry point: validate, run, report, graph."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import report as reporting
from .harness import Simulation, StageFailure, canonical, trace_to_jsonl
from .model import validate_scenario
from .scenario import ScenarioParseError, load

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_RUN = 0, 1, 2, 3
OUT_ENV = "FEDORCH_OUT_DIR"


def _load(path: str):
    try:
        return load(path), None
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, EXIT_PARSE


def cmd_validate(args) -> int:
    scenario, code = _load(args.file)
    if scenario is None:
        return code
    violations = validate_scenario(scenario)
    for v in violations:
        print(v)
    return EXIT_INVALID if violations else EXIT_OK


def _write_outputs(out: Path, result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_bytes(trace_to_jsonl(result.trace))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t_ns", "metric", "subject", "value"))
        for t, m, s, v in result.metrics:
            w.writerow((t, m, s, repr(float(v))))
    status_dir = out / "status"
    status_dir.mkdir(exist_ok=True)
    for app_id, doc in result.status.items():
        (status_dir / f"{app_id.replace('/', '_')}.json").write_text(
            json.dumps(json.loads(canonical(doc)), indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")


def _simulate(args):
    scenario, code = _load(args.file)
    if scenario is None:
        return None, code
    violations = validate_scenario(scenario)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return None, EXIT_INVALID
    try:
        return Simulation(scenario, args.seed).run(), None
    except StageFailure as exc:
        print(f"run failed at stage {exc.stage}: {exc.reason}", file=sys.stderr)
    except (KeyError, ValueError, RuntimeError) as exc:
        print(f"run failed at stage simulate: {exc}", file=sys.stderr)
    return None, EXIT_RUN


def cmd_run(args) -> int:
    out = Path(args.out or os.environ.get(OUT_ENV) or "fedorch-out")
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"run failed at stage output: {out} exists (use --force)", file=sys.stderr)
        return EXIT_RUN
    result, code = _simulate(args)
    if result is None:
        return code
    _write_outputs(out, result)
    s = result.summary
    print(f"{s['scenario']}: scheduled={s['scheduled']} failed={s['failed']} "
          f"migrated={s['migrated']} rolled_back={s['rolled_back']} -> {out}")
    return EXIT_RUN if result.violations else EXIT_OK


def cmd_report(args) -> int:
    try:
        rows = reporting.report(args.traces)
    except reporting.TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    text = reporting.to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_graph(args) -> int:
    result, code = _simulate(args)
    if result is None:
        return code
    graphs = result.sim.mdm.instances
    if not 0 <= args.instance < len(graphs):
        print(f"error: no metadata instance {args.instance}", file=sys.stderr)
        return EXIT_RUN
    text = json.dumps(graphs[args.instance].dump(), indent=2, sort_keys=True, default=str) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedorch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario document")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write outputs")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./fedorch-out)")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate traces into CSV")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("graph", help="run a scenario and dump the metadata graph")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
