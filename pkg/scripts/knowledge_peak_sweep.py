#!/usr/bin/env python3
"""Sweep stub oracles frozen at different years over a synthetic benchmark.

For each knowledge year, evaluates a stub client on the synthetic
eval dataset and reports where the per-year F1 curve peaks. A correct
metric stack puts the peak exactly at the knowledge year; the emitted
plot file holds the full curves for inspection.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from chronoforge.client import StubOracleClient, StubOracleConfig
from chronoforge.harness import (
    EvalConfig,
    EvalPrompting,
    build_report,
    run_eval,
    write_plot_data,
)
from chronoforge.synth import synthetic_eval_dataset


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--years",
        default="2010,2015,2019,2022",
        help="comma-separated knowledge years to sweep",
    )
    parser.add_argument("--questions", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="peak_sweep.json")
    args = parser.parse_args(argv)

    years = [int(y) for y in args.years.split(",")]
    ds = synthetic_eval_dataset(n=args.questions, seed=args.seed)
    split = ds.split("test")
    prompting = EvalPrompting(kind="finetuned_qa")

    runs = {}
    for year in years:
        client = StubOracleClient(StubOracleConfig(knowledge_year=year, dataset=ds))
        cfg = EvalConfig(target_year=year, epoch=ds.epoch, horizon=ds.horizon)
        records = run_eval(client, split, prompting, cfg)
        report = build_report(records, cfg)
        runs[f"frozen_{year}"] = report
        peak = report.argmax_year
        flag = "" if peak == year else "  <-- off-peak"
        print(
            f"knowledge year {year}: peak at {peak}, "
            f"F1 there {report.per_year[peak]:.3f}, "
            f"f_max mean {report.f_max_mean:.3f}{flag}"
        )

    write_plot_data(Path(args.out), runs)
    print(f"curves written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
