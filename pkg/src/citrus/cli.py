"""``citrus`` command-line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on a config,
parse or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments
from .config import SCHEMAS, ConfigError, load_config
from .fileio import CSVParseError, atomic_write_text, write_json, write_table
from .graphs import GraphGenerationError, GraphValidationError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citrus", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(SCHEMAS))
    parser.add_argument("--config", type=Path, help="flat key = value config file (defaults if omitted)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value; repeatable")
    parser.add_argument("--out", type=Path, help="output directory (default: citrus-out/<command>)")
    return parser


def write_outcome(outcome: experiments.Outcome, out: Path) -> None:
    """Write report.json, tables and extra files; timing-dependent results go to timings.*."""
    report = dict(outcome.report)
    report["checks"] = {c.name: {"passed": c.passed, "detail": c.detail} for c in outcome.checks if not c.timing}
    report["passed"] = all(c.passed for c in outcome.checks if not c.timing)
    write_json(out / "report.json", report)
    for name, (header, rows) in outcome.tables.items():
        write_table(out / name, header, rows)
    for name, (header, rows) in outcome.timing_tables.items():
        write_table(out / name, header, rows)
    timing = [c for c in outcome.checks if c.timing]
    if timing:
        write_json(out / "timings.json", {c.name: {"passed": c.passed, "detail": c.detail} for c in timing})
    for name, text in outcome.files.items():
        atomic_write_text(out / name, text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    out = args.out or Path("citrus-out") / args.command
    try:
        cfg = load_config(args.command, args.config, args.overrides)
        runner = experiments.RUNNERS[args.command]
        if args.command == "forecast":
            base = args.config.parent if args.config is not None else None
            outcome = runner(cfg, base)
        else:
            outcome = runner(cfg)
    except (ConfigError, CSVParseError, GraphValidationError, GraphGenerationError,
            experiments.InputError) as exc:
        print(f"citrus {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_outcome(outcome, out)
    for c in outcome.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    print(f"outputs written to {out}")
    return EXIT_OK if outcome.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
