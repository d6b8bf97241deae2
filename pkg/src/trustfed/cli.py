"""Command-line harness: run scenarios, validate registry files.

Exit codes: 0 all scenario assertions passed, 1 an assertion failed,
2 parse or configuration error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from typing import Optional

from .errors import InvariantViolation, ParseError, SimulationError
from .registry import FederationRegistry, load_registry_path
from .scenario import (
    RunReport,
    bundled_scenario_names,
    load_bundled_scenario,
    parse_scenario,
    run_scenario,
)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustfed",
        description="Deterministic cross-border trust federation simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one or more scenarios")
    run_p.add_argument(
        "scenarios",
        nargs="+",
        metavar="SCENARIO",
        help="bundled scenario name or path to a .scn file",
    )
    run_p.add_argument("--registry", metavar="FILE", help="registry data file (default: bundled)")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument(
        "--strict-recognition",
        action="store_true",
        help="enforce the 12-month mandatory-recognition date on authentication",
    )
    run_p.add_argument("--report", metavar="FILE", help="write a JSON report")
    run_p.add_argument("--log", metavar="FILE", help="write the event log")
    run_p.add_argument("--jobs", type=int, default=1, help="run scenarios in N parallel processes")

    vr = sub.add_parser("validate-registry", help="parse and lint a registry data file")
    vr.add_argument("file")

    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return parser


def _resolve_scenario_text(name_or_path: str) -> str:
    if os.path.exists(name_or_path):
        with open(name_or_path, "r", encoding="utf-8") as handle:
            return handle.read()
    if name_or_path in bundled_scenario_names():
        from importlib import resources

        return (
            resources.files("trustfed.data")
            .joinpath("scenarios")
            .joinpath(f"{name_or_path}.scn")
            .read_text("utf-8")
        )
    raise FileNotFoundError(f"no such scenario file or bundled scenario: {name_or_path}")


def _execute_one(args: tuple[str, Optional[str], Optional[int], bool]) -> RunReport:
    text, registry_path, seed, strict = args
    scenario = parse_scenario(text)
    registry: Optional[FederationRegistry] = None
    if registry_path is not None:
        registry = load_registry_path(registry_path)
    return run_scenario(scenario, registry, seed=seed, strict_recognition=strict)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        texts = [_resolve_scenario_text(s) for s in args.scenarios]
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    work = [(text, args.registry, args.seed, args.strict_recognition) for text in texts]
    try:
        if args.jobs > 1 and len(work) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_execute_one, work))
        else:
            reports = [_execute_one(item) for item in work]
    except (ParseError, InvariantViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for report in reports:
        for line in report.summary_lines():
            print(line)

    if args.report:
        payload = (
            reports[0].to_json()
            if len(reports) == 1
            else "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]"
        )
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(payload + "\n")
    if args.log:
        with open(args.log, "w", encoding="utf-8") as handle:
            for report in reports:
                handle.write("\n".join(report.log) + "\n")

    return EXIT_OK if all(r.passed for r in reports) else EXIT_ASSERTION


def _cmd_validate_registry(args: argparse.Namespace) -> int:
    try:
        registry = load_registry_path(args.file)
    except (ParseError, InvariantViolation, OSError) as exc:
        print(f"invalid registry: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{len(registry.schemes)} schemes loaded (clock {registry.clock})")
    for warning in registry.warnings:
        print(f"  note: {warning}")
    return EXIT_OK


def _cmd_list_scenarios(_: argparse.Namespace) -> int:
    for name in bundled_scenario_names():
        print(name)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate-registry":
        return _cmd_validate_registry(args)
    return _cmd_list_scenarios(args)


if __name__ == "__main__":
    sys.exit(main())
