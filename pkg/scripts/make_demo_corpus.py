#!/usr/bin/env python3
"""Write a self-contained demo workspace for the pipeline CLI.

Creates a synthetic table corpus, canned question-generation responses,
an offline pageview fixture, and a ready-to-run ``run.toml``. After this
script finishes, every stage can be run with::

    python3 scripts/run_all_stages.py --config <out>/run.toml
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from chronoforge.synth import synthetic_qg_responses, synthetic_tables, write_corpus

CONFIG_TEMPLATE = """\
[paths]
tables_dir = "corpus"
workdir = "work"

[client]
kind = "stub"
knowledge_year = {knowledge_year}
canned_responses = "canned.json"

[split]
seed = {seed}
dev_size = {dev_size}
test_size = {test_size}

[alignment]
target_year = {knowledge_year}
strategy = "correctness"
select_k = {select_k}
n_samples = 2

[eval]
target_year = {knowledge_year}
shots = "sensitive"
mention_time = true

[pageviews]
fixture_file = "pageviews.json"

[audit]
n = 5
seed = 1
"""


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="workspace directory to create")
    parser.add_argument("--tables", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dev-size", type=int, default=4)
    parser.add_argument("--test-size", type=int, default=6)
    parser.add_argument("--select-k", type=int, default=2)
    parser.add_argument("--knowledge-year", type=int, default=2022)
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tables = synthetic_tables(n=args.tables, seed=args.seed)
    write_corpus(tables, out / "corpus")
    (out / "canned.json").write_text(
        json.dumps(synthetic_qg_responses(tables), indent=2), encoding="utf-8"
    )

    # Two months of deterministic traffic per page; enough for a mean.
    months = {
        t.page_title: {"201601": 100 * (i + 1), "201602": 50}
        for i, t in enumerate(tables)
    }
    (out / "pageviews.json").write_text(json.dumps(months, indent=2), encoding="utf-8")

    (out / "run.toml").write_text(
        CONFIG_TEMPLATE.format(
            seed=args.seed,
            dev_size=args.dev_size,
            test_size=args.test_size,
            select_k=args.select_k,
            knowledge_year=args.knowledge_year,
        ),
        encoding="utf-8",
    )

    print(f"wrote {args.tables}-table demo workspace to {out}")
    print(f"next: python3 scripts/run_all_stages.py --config {out / 'run.toml'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
