"""Command-line interface.

    cpas run <scenario.json> [--seed N] [--report out.json] [--trace out.bin]
             [--files DIR | --no-files]
    cpas replay <trace.bin> [--report out.json] [--files DIR | --no-files]
    cpas serve <scenario.json> [--speed X] [--api-port 8080] [--te-port 7001]
               [--console DIR]
    cpas report <report.json> [--files DIR | --no-files]
    cpas bench [--tasks N] [--max-work W] [--round R] [--seed N]
    cpas inject --api URL (kill-te|revive-te) TE_ID
    cpas inject --api URL sensor TE_ID ZONE KIND

``run`` and ``replay`` exit 0 only if every scenario assertion passed.
The report path always writes the delimited CSV tables and the PNG figures
alongside the JSON unless --no-files is given.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .harness import run_scenario
from .harness.figures import render_figures
from .harness.report import build_report, render_table, report_json, write_csv
from .harness.scenario import ScenarioParseError, load_scenario
from .harness.trace import TraceError, read_trace, write_trace

EXIT_OK = 0
EXIT_ASSERTION_FAILED = 1
EXIT_USAGE = 2


def _write_files(report: dict, records, files_dir: Path) -> None:
    paths = write_csv(report, files_dir)
    paths += render_figures(report, records, files_dir)
    for path in paths:
        print(f"wrote {path}")


def _files_dir(args, anchor: Path) -> Path | None:
    if args.no_files:
        return None
    if args.files:
        return Path(args.files)
    return anchor.with_name(anchor.stem + "_files")


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        scenario.seed = args.seed
    started = time.monotonic()
    result = run_scenario(scenario)
    elapsed = time.monotonic() - started
    if args.trace:
        write_trace(args.trace, result.header, result.records)
        print(f"wrote {args.trace}")
    report_path = Path(args.report) if args.report else Path(args.scenario).with_suffix(
        ".report.json"
    )
    report_path.write_text(report_json(result.report))
    print(f"wrote {report_path}")
    files_dir = _files_dir(args, report_path)
    if files_dir is not None:
        _write_files(result.report, result.records, files_dir)
    print(render_table(result.report))
    print(f"(wall clock {elapsed:.2f} s)", file=sys.stderr)
    return EXIT_OK if result.report["passed"] else EXIT_ASSERTION_FAILED


def cmd_replay(args) -> int:
    if args.seed is not None:
        print(
            "replay error: --seed is not accepted; the trace embeds its seed",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        header, records = read_trace(args.trace)
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = build_report(header, records)
    if args.report:
        Path(args.report).write_text(report_json(report))
        print(f"wrote {args.report}")
    files_dir = _files_dir(args, Path(args.trace))
    if files_dir is not None:
        _write_files(report, records, files_dir)
    print(render_table(report))
    return EXIT_OK if report["passed"] else EXIT_ASSERTION_FAILED


def cmd_report(args) -> int:
    path = Path(args.report)
    try:
        report = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    files_dir = _files_dir(args, path)
    if files_dir is not None:
        _write_files(report, None, files_dir)
    print(render_table(report))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .harness.serve import serve_scenario  # deferred: pulls in sockets

    try:
        scenario = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        scenario.seed = args.seed
    return serve_scenario(
        scenario,
        speed=args.speed,
        api_port=args.api_port,
        te_port=args.te_port,
        console_dir=args.console,
    )


def cmd_bench(args) -> int:
    from .harness.rng import SplitMix64
    from .scheduler import simulate

    rng = SplitMix64(args.seed)
    works = [1 + int(rng.random() * args.max_work) for _ in range(args.tasks)]
    started = time.monotonic()
    result = simulate(works, round_budget=args.round, check=args.check)
    elapsed = time.monotonic() - started
    servings: dict = {}
    worst_gap = 0
    for i, (task_id, _) in enumerate(result.slices):
        if task_id in servings:
            worst_gap = max(worst_gap, i - servings[task_id])
        servings[task_id] = i
    print(
        f"{args.tasks} tasks, total work {sum(works)} ticks, round budget {args.round}"
    )
    print(
        f"completed in {result.total_ticks} ticks across {len(result.slices)} slices "
        f"({elapsed * 1000:.1f} ms wall)"
    )
    print(f"worst inter-serving gap: {worst_gap} slices")
    return EXIT_OK


def cmd_inject(args) -> int:
    import urllib.request

    body = {"action": args.what, "te_id": args.te_id}
    if args.what == "sensor":
        body.update(zone=args.zone, sensor=args.sensor)
    data = json.dumps(body).encode()
    request = urllib.request.Request(
        args.api.rstrip("/") + "/inject", data=data,
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(request, timeout=10) as resp:
        print(resp.read().decode())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpas", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_files_flags(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--files", help="directory for CSV tables and PNG figures")
        group.add_argument(
            "--no-files", action="store_true", help="skip CSV/figure output"
        )

    p = sub.add_parser("run", help="run a scenario under virtual time")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="report JSON path (default: <scenario>.report.json)")
    p.add_argument("--trace", help="write the deterministic trace file here")
    add_files_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-derive a report from a trace file")
    p.add_argument("trace")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)  # always rejected
    p.add_argument("--report")
    add_files_flags(p)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("report", help="print a report and render its files")
    p.add_argument("report")
    add_files_flags(p)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="run live against wall clock with the operator API")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--speed", type=float, default=1.0,
                   help="virtual seconds per wall second")
    p.add_argument("--api-port", type=int, default=8080)
    p.add_argument("--te-port", type=int, default=7001)
    p.add_argument("--console", help="serve this directory as the operator console")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="exercise the round-robin scheduler")
    p.add_argument("--tasks", type=int, default=2000)
    p.add_argument("--max-work", type=int, default=20)
    p.add_argument("--round", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--check", action="store_true",
                   help="verify queue invariants after every mutation")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inject", help="inject an event into a live serve instance")
    p.add_argument("--api", default="http://127.0.0.1:8080")
    p.add_argument("what", choices=["kill-te", "revive-te", "sensor"])
    p.add_argument("te_id", type=int)
    p.add_argument("zone", type=int, nargs="?", default=1)
    p.add_argument("sensor", nargs="?", default="IR",
                   choices=["IR", "SMOKE", "TEMPERATURE"])
    p.set_defaults(fn=cmd_inject)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
