"""Finetune tiny causal LMs on masked QA training files and serve them.

The package consumes three file formats produced upstream (a training
JSONL with per-example loss-mask modes, a flat TOML hyperparameter
file, and a dataset JSONL it never needs to parse) and exposes the
same completions HTTP contract the upstream evaluation client speaks.
"""
from finetune_runner.data import (
    EOS_ID,
    PAD_ID,
    VOCAB_SIZE,
    ByteTokenizer,
    EncodedExample,
    MaskedBatch,
    TrainingRecord,
    collate,
    encode_record,
    read_training_jsonl,
    supervised_text,
)
from finetune_runner.hparams import HParams, HParamsError, load_hparams
from finetune_runner.model import (
    TinyLM,
    TinyLMConfig,
    load_checkpoint,
    masked_loss,
    parse_model_id,
    save_checkpoint,
)
from finetune_runner.serve import GenerationResult, generate, make_server, serve
from finetune_runner.train import TrainReport, train

__all__ = [
    "ByteTokenizer",
    "EncodedExample",
    "EOS_ID",
    "GenerationResult",
    "HParams",
    "HParamsError",
    "MaskedBatch",
    "PAD_ID",
    "TinyLM",
    "TinyLMConfig",
    "TrainReport",
    "TrainingRecord",
    "VOCAB_SIZE",
    "collate",
    "encode_record",
    "generate",
    "load_checkpoint",
    "load_hparams",
    "make_server",
    "masked_loss",
    "parse_model_id",
    "read_training_jsonl",
    "save_checkpoint",
    "serve",
    "supervised_text",
    "train",
]
