"""Training-data production for temporally aligning a language model.

Covers correctness-based selection of finetuning questions, per-question
adaptive year assignment, and emission of the two training-file formats
plus the finetuning hyperparameter config.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .client import CapabilityError, CompletionRequest, TransportError
from .kb import (
    DEFAULT_EPOCH,
    DEFAULT_HORIZON,
    Dataset,
    TemporalQuestion,
    answers_at,
)
from .metrics import f1_at_year
from .prompting import (
    SENSITIVE_DEMO_SHOTS,
    CompletionClient,
    FewShotSet,
    PromptStrategy,
    build_qa_prompt,
)

log = logging.getLogger(__name__)

SELECTION_STRATEGIES = ("correctness", "popularity", "confidence", "random")

QA_PROMPT = "Answer the following question: {q}\nThe answer is:"
ADAPTIVE_PROMPT = "Answer the following question: {q}\n"
ADAPTIVE_COMPLETION = (
    "Based on my latest knowledge for this question from year {y}, "
    "the answer is: {a}"
)

SCORING_MAX_TOKENS = 64


@dataclass(frozen=True)
class AlignmentConfig:
    target_year: int
    n_samples: int = 10
    select_k: int = 5000
    adaptive_threshold: float = 0.7
    cutoff_year: int = 2022
    strategy: str = "correctness"
    seed: int = 0
    sample_temperature: float = 1.0
    epoch: int = DEFAULT_EPOCH
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        if not 0.0 < self.adaptive_threshold <= 1.0:
            raise ValueError("adaptive_threshold must be in (0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.select_k < 1:
            raise ValueError("select_k must be >= 1")
        if self.strategy not in SELECTION_STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not self.epoch <= self.target_year <= self.horizon:
            raise ValueError("target_year outside the dataset year range")
        if not self.epoch <= self.cutoff_year <= self.horizon:
            raise ValueError("cutoff_year outside the dataset year range")


@dataclass(frozen=True)
class TrainingExample:
    id: str
    prompt: str
    completion: str
    loss_mask_mode: str  # "answer_only" | "full_output"
    assigned_year: int | None = None

    def __post_init__(self):
        if self.loss_mask_mode == "answer_only":
            if self.assigned_year is not None:
                raise ValueError("target-year examples carry no assigned year")
        elif self.loss_mask_mode == "full_output":
            if self.assigned_year is None:
                raise ValueError("adaptive examples need an assigned year")
        else:
            raise ValueError(f"unknown loss_mask_mode {self.loss_mask_mode!r}")


@dataclass(frozen=True)
class HyperParams:
    precision: str = "bfloat16"
    epochs: int = 2
    learning_rate: float = 5e-6
    warmup_ratio: float = 0.03
    schedule: str = "linear_decay"
    max_seq_len: int = 128
    batch_size: int = 128

    def __post_init__(self):
        for name in ("epochs", "learning_rate", "warmup_ratio",
                     "max_seq_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# Correctness scoring
# ---------------------------------------------------------------------------

def score_correctness(
    client: CompletionClient,
    q: TemporalQuestion,
    year: int,
    cfg: AlignmentConfig,
    shots: FewShotSet | None = None,
) -> float:
    """Best F1 against the year's answers over sampled completions."""
    strat = PromptStrategy("time_sensitive", mention_time=True, target_year=year)
    req = CompletionRequest(
        prompt=build_qa_prompt(q.text, strat, shots or SENSITIVE_DEMO_SHOTS),
        max_tokens=SCORING_MAX_TOKENS,
        temperature=cfg.sample_temperature,
        n_samples=cfg.n_samples,
        stop_sequences=("\n\n",),
    )
    result = client.complete(req)
    return max(
        f1_at_year(text.strip(), q, year, cfg.horizon) for text in result.texts
    )


def score_questions(
    client: CompletionClient,
    questions: Iterable[TemporalQuestion],
    year: int,
    cfg: AlignmentConfig,
    shots: FewShotSet | None = None,
) -> tuple[dict[str, float], list[str]]:
    """Scores by question id, plus ids left unscored by transport failure."""
    scores: dict[str, float] = {}
    unscored: list[str] = []
    for q in sorted(questions, key=lambda q: q.id):
        try:
            scores[q.id] = score_correctness(client, q, year, cfg, shots)
        except TransportError as exc:
            log.warning("question %s left unscored: %s", q.id, exc)
            unscored.append(q.id)
    return scores, unscored


def greedy_confidence(
    client: CompletionClient,
    q: TemporalQuestion,
    year: int,
    shots: FewShotSet | None = None,
) -> float:
    """Mean per-token log-probability of the greedy completion."""
    strat = PromptStrategy("time_sensitive", mention_time=True, target_year=year)
    req = CompletionRequest(
        prompt=build_qa_prompt(q.text, strat, shots or SENSITIVE_DEMO_SHOTS),
        max_tokens=SCORING_MAX_TOKENS,
        temperature=0.0,
        stop_sequences=("\n\n",),
        want_logprobs=True,
    )
    result = client.complete(req)
    if not result.mean_logprobs or result.mean_logprobs[0] is None:
        raise CapabilityError("client returned no log-probabilities")
    return result.mean_logprobs[0]


# ---------------------------------------------------------------------------
# Training-set selection
# ---------------------------------------------------------------------------

def select_training(
    train: Sequence[TemporalQuestion],
    cfg: AlignmentConfig,
    scores: Mapping[str, float] | None = None,
    confidences: Mapping[str, float] | None = None,
) -> list[str]:
    """The ``cfg.select_k`` question ids chosen by ``cfg.strategy``."""
    k = cfg.select_k
    if k > len(train):
        raise ValueError(f"select_k={k} exceeds train size {len(train)}")

    if cfg.strategy == "correctness":
        if scores is None:
            raise ValueError("correctness selection needs scores")
        missing = [q.id for q in train if q.id not in scores]
        if missing:
            raise ValueError(f"unscored train questions: {missing[:5]}")
        ranked = sorted(train, key=lambda q: (-scores[q.id], q.id))
    elif cfg.strategy == "popularity":
        missing = [q.id for q in train if q.popularity is None]
        if missing:
            raise ValueError(f"popularity missing: {missing[:5]}")
        ranked = sorted(train, key=lambda q: (-(q.popularity or 0.0), q.id))
    elif cfg.strategy == "confidence":
        if confidences is None:
            raise ValueError("confidence selection needs confidences")
        missing = [q.id for q in train if q.id not in confidences]
        if missing:
            raise ValueError(f"missing confidences: {missing[:5]}")
        ranked = sorted(train, key=lambda q: (-confidences[q.id], q.id))
    else:  # random
        rng = random.Random(f"{cfg.seed}:select")
        ids = sorted(q.id for q in train)
        return sorted(rng.sample(ids, k))
    return [q.id for q in ranked[:k]]


# ---------------------------------------------------------------------------
# Adaptive year assignment
# ---------------------------------------------------------------------------

def assign_adaptive_year(
    client: CompletionClient,
    q: TemporalQuestion,
    cfg: AlignmentConfig,
    shots: FewShotSet | None = None,
) -> int | None:
    """Latest year at or before the cutoff the model answers well enough.

    Years without answers are skipped; a transport failure leaves the
    question unassigned rather than half-scored.
    """
    for year in range(cfg.cutoff_year, cfg.epoch - 1, -1):
        if not answers_at(q, year, cfg.horizon):
            continue
        try:
            score = score_correctness(client, q, year, cfg, shots)
        except TransportError as exc:
            log.warning("question %s unassigned: %s", q.id, exc)
            return None
        if score > cfg.adaptive_threshold:
            return year
    return None


def assign_all(
    client: CompletionClient,
    questions: Iterable[TemporalQuestion],
    cfg: AlignmentConfig,
    shots: FewShotSet | None = None,
) -> dict[str, int]:
    """Adaptive year per question id; unassignable questions are absent."""
    out: dict[str, int] = {}
    for q in sorted(questions, key=lambda q: q.id):
        year = assign_adaptive_year(client, q, cfg, shots)
        if year is not None:
            out[q.id] = year
    return out


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _gold_answer(q: TemporalQuestion, year: int, horizon: int) -> str | None:
    golds = answers_at(q, year, horizon)
    if not golds:
        return None
    return min(golds)


def emit_target_year(
    selected: Iterable[str], dataset: Dataset, year: int
) -> list[TrainingExample]:
    """Year-free QA examples answering every question as of ``year``."""
    out: list[TrainingExample] = []
    for qid in sorted(selected):
        q = dataset.by_id(qid)
        answer = _gold_answer(q, year, dataset.horizon)
        if answer is None:
            log.warning("question %s has no answer in %d; skipped", qid, year)
            continue
        out.append(TrainingExample(
            id=qid,
            prompt=QA_PROMPT.format(q=q.text),
            completion=answer,
            loss_mask_mode="answer_only",
        ))
    return out


def emit_adaptive(
    assignments: Mapping[str, int], dataset: Dataset
) -> list[TrainingExample]:
    """Examples that state the assigned year before answering."""
    out: list[TrainingExample] = []
    for qid in sorted(assignments):
        year = assignments[qid]
        q = dataset.by_id(qid)
        answer = _gold_answer(q, year, dataset.horizon)
        if answer is None:
            raise RuntimeError(
                f"assignment {qid} -> {year} has an empty answer set"
            )
        out.append(TrainingExample(
            id=qid,
            prompt=ADAPTIVE_PROMPT.format(q=q.text),
            completion=ADAPTIVE_COMPLETION.format(y=year, a=answer),
            loss_mask_mode="full_output",
            assigned_year=year,
        ))
    return out


def write_training_jsonl(
    path: str | Path, examples: Sequence[TrainingExample]
) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "prompt": ex.prompt,
                "completion": ex.completion,
                "loss_mask": ex.loss_mask_mode,
                "assigned_year": ex.assigned_year,
                "id": ex.id,
            }, ensure_ascii=False) + "\n")


def read_training_jsonl(path: str | Path) -> list[TrainingExample]:
    out: list[TrainingExample] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(TrainingExample(
                id=rec["id"],
                prompt=rec["prompt"],
                completion=rec["completion"],
                loss_mask_mode=rec["loss_mask"],
                assigned_year=rec["assigned_year"],
            ))
    return out


def emit_hparams(path: str | Path, hp: HyperParams | None = None) -> None:
    hp = hp if hp is not None else HyperParams()
    lines = [
        "# finetuning hyperparameters",
        "# schedule refers to the learning rate; weight decay itself is zero",
        f'precision = "{hp.precision}"',
        f"epochs = {hp.epochs}",
        f"learning_rate = {hp.learning_rate}",
        f"warmup_ratio = {hp.warmup_ratio}",
        f'schedule = "{hp.schedule}"',
        f"max_seq_len = {hp.max_seq_len}",
        f"batch_size = {hp.batch_size}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
