"""Flat TOML hyperparameter files.

The upstream pipeline emits a flat key/value TOML file; this reader
accepts exactly that shape (comments, blank lines, `key = value`) and
rejects anything else loudly rather than guessing.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields
from pathlib import Path

PRECISIONS = ("float32", "bfloat16")
SCHEDULES = ("linear_decay", "constant")

_INT_RE = re.compile(r"^[+-]?\d+$")


class HParamsError(ValueError):
    pass


@dataclass(frozen=True)
class HParams:
    precision: str = "bfloat16"
    epochs: int = 2
    learning_rate: float = 5e-6
    warmup_ratio: float = 0.03
    schedule: str = "linear_decay"
    max_seq_len: int = 128
    batch_size: int = 128

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise HParamsError(f"unsupported precision {self.precision!r}")
        if self.schedule not in SCHEDULES:
            raise HParamsError(f"unsupported schedule {self.schedule!r}")
        for name in ("epochs", "max_seq_len", "batch_size"):
            if getattr(self, name) < 1:
                raise HParamsError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise HParamsError("learning_rate must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise HParamsError("warmup_ratio must be in [0, 1)")


def _parse_value(text: str, lineno: int):
    if text.startswith('"'):
        if len(text) < 2 or not text.endswith('"') or "\\" in text:
            raise HParamsError(f"line {lineno}: malformed string {text!r}")
        return text[1:-1]
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise HParamsError(f"line {lineno}: cannot parse value {text!r}") from None


def load_hparams(path: str | Path) -> HParams:
    data: dict[str, object] = {}
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), 1
    ):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise HParamsError(f"line {lineno}: expected 'key = value'")
        if key in data:
            raise HParamsError(f"line {lineno}: duplicate key {key!r}")
        data[key] = _parse_value(value, lineno)

    types = {
        "precision": str,
        "epochs": int,
        "learning_rate": float,
        "warmup_ratio": float,
        "schedule": str,
        "max_seq_len": int,
        "batch_size": int,
    }
    assert set(types) == {f.name for f in fields(HParams)}
    unknown = sorted(set(data) - set(types))
    if unknown:
        raise HParamsError(f"unknown keys: {', '.join(unknown)}")
    for name, value in data.items():
        # an int is acceptable where a float is expected, nothing else crosses
        if types[name] is float and isinstance(value, int):
            data[name] = float(value)
        elif type(value) is not types[name]:
            raise HParamsError(f"key {name!r} has the wrong type")
    return HParams(**data)  # type: ignore[arg-type]
