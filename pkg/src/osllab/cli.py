"""Command line: ``osllab run``, ``osllab verify`` and ``osllab schema``.

Exit codes: 0 success, 1 a verification check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .scenario import SCENARIO_SCHEMA, ScenarioError, load_scenario, run_scenario
from .suites import SUITES, run_suite

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osllab", description="Flows, transport and continuity equations for OSL fields.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario file (or a run manifest)")
    run.add_argument("scenario")
    run.add_argument("--out", help="output directory (default: outputs.dir or ./osllab-out)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo chunks")

    verify = sub.add_parser("verify", help="run an acceptance suite")
    verify.add_argument("suite", help="one of: " + ", ".join(SUITES))
    verify.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance by F")
    verify.add_argument("--threads", type=int, default=1)
    verify.add_argument("--report", help="also write the report to this file")

    sub.add_parser("schema", help="print the scenario JSON schema")
    return parser


def _cmd_run(args) -> int:
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sc = load_scenario(args.scenario)
        manifest = run_scenario(sc, args.out, seed=args.seed, threads=args.threads)
    except ScenarioError as exc:
        for line in str(exc).splitlines():
            print(f"{args.scenario}: {line}", file=sys.stderr)
        return EXIT_CONFIG
    for name, digest in sorted(manifest["outputs"].items()):
        print(f"{digest}  {name}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.tol_scale > 0:
        print("error: --tol-scale must be positive", file=sys.stderr)
        return EXIT_CONFIG
    log = logging.getLogger("osllab.verify")
    report = run_suite(args.suite, args.tol_scale, args.threads, progress=lambda k: log.info("criterion %d", k))
    text = report.text()
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "verify":
        return _cmd_verify(args)
    json.dump(SCENARIO_SCHEMA, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
