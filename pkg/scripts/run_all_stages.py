#!/usr/bin/env python3
"""Run every pipeline stage in order against one config file.

Stops at the first failing stage and exits with that stage's code, so
shell scripts can chain on success. Stages that are already up to date
are skipped by the CLI itself.
"""
from __future__ import annotations

import argparse
import sys

from chronoforge.cli import EXIT_OK, main as cli_main

STAGES = (
    "extract-tables",
    "gen-questions",
    "curate",
    "split",
    "fetch-popularity",
    "select-data",
    "assign-adaptive",
    "emit-train",
    "eval",
    "report",
    "sample-audit",
)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True, help="path to run.toml")
    parser.add_argument(
        "--from-stage",
        choices=STAGES,
        help="skip stages before this one (freshness checks make a full "
        "rerun cheap, so this is rarely needed)",
    )
    args = parser.parse_args(argv)

    started = args.from_stage is None
    for stage in STAGES:
        if not started:
            if stage != args.from_stage:
                continue
            started = True
        print(f"== {stage}", flush=True)
        code = cli_main([stage, "--config", args.config])
        if code != EXIT_OK:
            print(f"stage {stage} failed with exit code {code}", file=sys.stderr)
            return code
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
