"""Shared fixtures: small hand-written training files and hparams."""
from __future__ import annotations

import json

import pytest

# short prompts so everything fits max_seq_len 64 in toy runs
TOY_RECORDS = [
    {
        "prompt": f"Answer the following question: What is item {i}?\nThe answer is:",
        "completion": f"thing{i}",
        "loss_mask": "answer_only",
        "assigned_year": None,
        "id": f"toy{i:02d}",
    }
    for i in range(8)
]

TOY_HPARAMS = """\
precision = "float32"
epochs = 2
learning_rate = 0.001
warmup_ratio = 0.1
schedule = "linear_decay"
max_seq_len = 96
batch_size = 4
"""


def write_jsonl(path, records):
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )


@pytest.fixture
def toy_train_file(tmp_path):
    path = tmp_path / "train.jsonl"
    write_jsonl(path, TOY_RECORDS)
    return path


@pytest.fixture
def toy_hparams_file(tmp_path):
    path = tmp_path / "hparams.toml"
    path.write_text(TOY_HPARAMS, encoding="utf-8")
    return path
