"""Training file reading, byte tokenization, and masked batches."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch

PAD_ID = 256
EOS_ID = 257
VOCAB_SIZE = 258

LOSS_MASK_MODES = ("answer_only", "full_output")


class ByteTokenizer:
    """UTF-8 bytes as tokens; ids 256+ are control tokens.

    Byte-exact by construction: decode(encode(s)) == s, so the
    supervised-span round trip has no whitespace slack to forgive.
    """

    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class TrainingRecord:
    id: str
    prompt: str
    completion: str
    loss_mask: str
    assigned_year: int | None

    def __post_init__(self):
        if self.loss_mask not in LOSS_MASK_MODES:
            raise ValueError(f"unknown loss mask mode {self.loss_mask!r}")
        if not self.completion:
            raise ValueError(f"record {self.id!r} has an empty completion")


def read_training_jsonl(path: str | Path) -> list[TrainingRecord]:
    records: list[TrainingRecord] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            missing = {"prompt", "completion", "loss_mask", "id"} - set(rec)
            if missing:
                raise ValueError(
                    f"line {lineno} is missing keys: {', '.join(sorted(missing))}"
                )
            records.append(TrainingRecord(
                id=rec["id"],
                prompt=rec["prompt"],
                completion=rec["completion"],
                loss_mask=rec["loss_mask"],
                assigned_year=rec.get("assigned_year"),
            ))
    return records


@dataclass(frozen=True)
class EncodedExample:
    """One sequence: prompt then completion then EOS, flags on the tail.

    Both mask modes supervise exactly the completion span (plus EOS):
    in answer_only files the completion is the bare answer, in
    full_output files it is the whole output sentence. Prompt tokens
    are never supervised.
    """

    record_id: str
    input_ids: tuple[int, ...]
    loss_flags: tuple[int, ...]
    truncated: bool


def encode_record(
    rec: TrainingRecord, tok: ByteTokenizer, max_seq_len: int
) -> EncodedExample:
    if max_seq_len < 2:
        raise ValueError("max_seq_len must be at least 2")
    prompt_ids = tok.encode(rec.prompt)
    completion_ids = tok.encode(rec.completion) + [EOS_ID]
    ids = prompt_ids + completion_ids
    flags = [0] * len(prompt_ids) + [1] * len(completion_ids)
    truncated = len(ids) > max_seq_len
    if truncated:
        # drop from the left: the prompt head goes first, the
        # completion tail survives as long as anything does
        ids, flags = ids[-max_seq_len:], flags[-max_seq_len:]
    return EncodedExample(
        record_id=rec.id,
        input_ids=tuple(ids),
        loss_flags=tuple(flags),
        truncated=truncated,
    )


def supervised_text(enc: EncodedExample, tok: ByteTokenizer) -> str:
    """Decode of the supervised span; equals the completion when untruncated."""
    return tok.decode(i for i, f in zip(enc.input_ids, enc.loss_flags) if f)


@dataclass(frozen=True)
class MaskedBatch:
    """Right-padded token batch; the loss mask is a subset of attention."""

    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    loss_mask: torch.Tensor

    def __post_init__(self):
        if not (
            self.input_ids.shape == self.attention_mask.shape == self.loss_mask.shape
        ):
            raise ValueError("batch tensors must share one shape")
        stray = self.loss_mask & (1 - self.attention_mask)
        if stray.any():
            raise ValueError("loss mask marks padded positions")


def collate(examples: Sequence[EncodedExample]) -> MaskedBatch:
    if not examples:
        raise ValueError("cannot collate an empty batch")
    width = max(len(e.input_ids) for e in examples)
    ids = torch.full((len(examples), width), PAD_ID, dtype=torch.long)
    attn = torch.zeros((len(examples), width), dtype=torch.long)
    loss = torch.zeros((len(examples), width), dtype=torch.long)
    for row, e in enumerate(examples):
        n = len(e.input_ids)
        ids[row, :n] = torch.tensor(e.input_ids, dtype=torch.long)
        attn[row, :n] = 1
        loss[row, :n] = torch.tensor(e.loss_flags, dtype=torch.long)
    return MaskedBatch(input_ids=ids, attention_mask=attn, loss_mask=loss)
