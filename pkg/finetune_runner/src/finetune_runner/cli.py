"""Command line entry points: train a checkpoint, serve a checkpoint."""
from __future__ import annotations

import argparse
import logging
import sys


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="finetune-runner",
        description="finetune tiny causal LMs on masked QA files and serve them",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="finetune and write a checkpoint")
    p_train.add_argument("--train-file", required=True)
    p_train.add_argument("--hparams", required=True)
    p_train.add_argument("--model-id", default="tiny")
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--micro-batch-size", type=int, default=8)
    p_train.add_argument("--seed", type=int, default=0)

    p_serve = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p_serve.add_argument("--checkpoint", required=True)
    p_serve.add_argument("--port", type=int, required=True)
    p_serve.add_argument("--host", default="127.0.0.1")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    # import late so --help stays fast
    if args.command == "train":
        from finetune_runner.train import train

        report = train(
            args.train_file,
            args.hparams,
            model_id=args.model_id,
            out_dir=args.out_dir,
            micro_batch_size=args.micro_batch_size,
            seed=args.seed,
        )
        print(
            f"trained {report.model_id} for {report.epochs} epochs "
            f"({report.steps} steps); epoch mean loss "
            f"{', '.join(f'{x:.4f}' for x in report.epoch_mean_loss)}"
        )
        print(f"checkpoint at {report.checkpoint_dir}")
        return 0

    from finetune_runner.serve import serve

    try:
        serve(args.checkpoint, args.port, host=args.host)
    except OSError as exc:
        print(f"cannot serve: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
