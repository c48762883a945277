"""Command line entry point: ``pcimkit run | suite | adversary``.

Exit codes: 0 pass, 1 expectation mismatch, 2 invariant violation missed,
3 invalid input. ``PCIMKIT_SEED`` overrides scenario seeds when ``--seed`` is
not given.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import ScenarioInvalid
from .adversary import run_adversary_suite
from .report import AllocationMatrix, emit_allocation_report
from .runner import EXIT_INVALID, EXIT_MISSED, EXIT_OK, run_scenario
from .scenario import ADVERSARY_KINDS, load_scenario

SEED_ENV = "PCIMKIT_SEED"


def _default_seed(cli_seed: int | None) -> int | None:
    if cli_seed is not None:
        return cli_seed
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw, 0)
    except ValueError:
        raise ScenarioInvalid(f"{SEED_ENV}={raw!r} is not an integer", field=SEED_ENV) from None


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, _default_seed(args.seed))
    if args.log:
        Path(args.log).write_text("".join(line + "\n" for line in result.log), encoding="utf-8")
    sys.stdout.write(emit_allocation_report(result.matrix, args.report))
    for index, expected, got in result.mismatches:
        print(f"mismatch event={index} expected={expected} got={got}", file=sys.stderr)
    for invariant, detail in result.violations:
        print(f"missed {invariant}: {detail}", file=sys.stderr)
    return result.status


def cmd_suite(args) -> int:
    directory = Path(args.directory)
    files = sorted(directory.glob("*.pcim"))
    if not files:
        raise ScenarioInvalid(f"no *.pcim scenarios in {directory}")
    seed = _default_seed(args.seed)
    total = AllocationMatrix()
    worst = EXIT_OK
    for path in files:
        scenario = load_scenario(path)
        result = run_scenario(scenario, seed)
        total.merge(result.matrix)
        status = result.status
        gaps = result.matrix.coverage_gaps(scenario.quadrant)
        print(
            f"scenario={scenario.name} quadrant={scenario.quadrant} status={status} "
            f"events={len(scenario.events)} mismatches={len(result.mismatches)} "
            f"missed={len(result.violations)} gaps={','.join(gaps) or '-'}"
        )
        for kind in scenario.adversaries:
            summary = run_adversary_suite(scenario, kind, scenario.adversary_trials, seed)
            print("  " + summary.line())
            if summary.missed:
                status = EXIT_MISSED
            total.merge(summary.matrix)
        worst = max(worst, status)
    sys.stdout.write(emit_allocation_report(total, args.report))
    return worst


def cmd_adversary(args) -> int:
    scenario = load_scenario(args.scenario)
    summary = run_adversary_suite(scenario, args.kind, args.trials, _default_seed(args.seed))
    print(summary.line())
    return EXIT_OK if summary.passed else EXIT_MISSED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcimkit", description="Proof-carrying message portal simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario file")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--log", metavar="PATH", help="write the event log here")
    run.add_argument("--report", choices=("text", "structured"), default="text")
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="run every *.pcim scenario in a directory")
    suite.add_argument("directory")
    suite.add_argument("--seed", type=int)
    suite.add_argument("--report", choices=("text", "structured"), default="text")
    suite.set_defaults(func=cmd_suite)

    adv = sub.add_parser("adversary", help="run one adversary family against a scenario's setup")
    adv.add_argument("scenario")
    adv.add_argument("--kind", required=True, choices=ADVERSARY_KINDS)
    adv.add_argument("--trials", type=int, default=100)
    adv.add_argument("--seed", type=int)
    adv.set_defaults(func=cmd_adversary)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioInvalid as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
