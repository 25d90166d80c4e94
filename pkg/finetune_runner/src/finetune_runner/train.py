"""Single-process finetuning driven entirely by the hparams file."""
from __future__ import annotations

import json
import logging
import math
import random
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch

from finetune_runner.data import (
    ByteTokenizer,
    EncodedExample,
    collate,
    encode_record,
    read_training_jsonl,
)
from finetune_runner.hparams import HParams, load_hparams
from finetune_runner.model import (
    TinyLM,
    masked_loss_terms,
    parse_model_id,
    save_checkpoint,
)

log = logging.getLogger(__name__)

LOSS_LOG = "loss_log.jsonl"
REPORT = "train_report.json"


@dataclass(frozen=True)
class TrainReport:
    model_id: str
    n_examples: int
    n_truncated: int
    epochs: int
    steps: int
    epoch_mean_loss: tuple[float, ...]
    precision: str
    seed: int
    checkpoint_dir: str


def _chunks(seq: Sequence[int], size: int):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _lr_lambda(hp: HParams, total_steps: int):
    warmup = math.ceil(hp.warmup_ratio * total_steps)

    def scale(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        if hp.schedule == "constant":
            return 1.0
        remaining = total_steps - warmup
        if remaining <= 0:
            return 1.0
        return max(0.0, (total_steps - step) / remaining)

    return scale


def train(
    train_file: str | Path,
    hparams_file: str | Path,
    model_id: str = "tiny",
    out_dir: str | Path = "checkpoint",
    *,
    micro_batch_size: int = 8,
    seed: int = 0,
) -> TrainReport:
    """Finetune on a training JSONL and write a checkpoint plus loss log.

    The config's batch size is reached by gradient accumulation over
    micro batches, so one optimizer step always sees one full batch
    regardless of memory. Micro losses are weighted by supervised
    token count; the recorded step loss is the exact full-batch mean.
    """
    hp = load_hparams(hparams_file)
    records = read_training_jsonl(train_file)
    if not records:
        raise ValueError(f"training file {train_file} is empty")
    tok = ByteTokenizer()
    encoded = [encode_record(r, tok, hp.max_seq_len) for r in records]
    n_truncated = sum(e.truncated for e in encoded)
    if n_truncated:
        log.info("left-truncated %d of %d sequences", n_truncated, len(encoded))

    torch.manual_seed(seed)
    model = TinyLM(parse_model_id(model_id))
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=hp.learning_rate, weight_decay=0.0)
    steps_per_epoch = math.ceil(len(encoded) / hp.batch_size)
    total_steps = steps_per_epoch * hp.epochs
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(hp, total_steps))
    autocast = (
        torch.autocast("cpu", dtype=torch.bfloat16)
        if hp.precision == "bfloat16"
        else nullcontext()
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    step = 0
    epoch_means: list[float] = []
    with (out / LOSS_LOG).open("w", encoding="utf-8") as log_fh:
        for epoch in range(hp.epochs):
            order = list(range(len(encoded)))
            rng.shuffle(order)
            step_losses: list[float] = []
            for chunk in _chunks(order, hp.batch_size):
                micro: list[list[EncodedExample]] = [
                    [encoded[i] for i in part]
                    for part in _chunks(chunk, micro_batch_size)
                ]
                # the denominator is known from the masks alone, so each
                # micro batch can backward immediately at its final weight
                denom = sum(
                    sum(e.loss_flags[1:]) for part in micro for e in part
                )
                opt.zero_grad()
                loss_value = 0.0
                for part in micro:
                    batch = collate(part)
                    with autocast:
                        logits = model(batch.input_ids)
                    loss_sum, _ = masked_loss_terms(
                        logits, batch.input_ids, batch.loss_mask
                    )
                    (loss_sum / denom).backward()
                    loss_value += float(loss_sum.detach()) / denom
                lr = opt.param_groups[0]["lr"]
                opt.step()
                sched.step()
                step += 1
                log_fh.write(json.dumps({
                    "step": step,
                    "epoch": epoch,
                    "loss": loss_value,
                    "lr": lr,
                    "n_supervised": denom,
                }) + "\n")
                step_losses.append(loss_value)
            epoch_means.append(sum(step_losses) / len(step_losses))

    save_checkpoint(out, model, meta={
        "model_id": model_id,
        "max_seq_len": hp.max_seq_len,
        "precision": hp.precision,
        "seed": seed,
    })
    report = TrainReport(
        model_id=model_id,
        n_examples=len(records),
        n_truncated=n_truncated,
        epochs=hp.epochs,
        steps=step,
        epoch_mean_loss=tuple(epoch_means),
        precision=hp.precision,
        seed=seed,
        checkpoint_dir=str(out),
    )
    (out / REPORT).write_text(
        json.dumps(asdict(report), indent=2) + "\n", encoding="utf-8"
    )
    return report
