"""Few-shot QA prompt construction and demonstration selection.

Prompts are completions-style text, no chat roles. Every block is the
same three-line shape: the question line, a lead-in, and (for shots)
the answer. The query block stops at the lead-in so the model's
continuation is the answer.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .client import QUESTION_LEAD_IN, CompletionRequest, CompletionResult
from .kb import DEFAULT_HORIZON, TemporalQuestion
from .metrics import f1_at_year

log = logging.getLogger(__name__)

PLAIN_LEAD_IN = "The answer is:"
TIMED_LEAD_IN = "As of year {year}, the answer is:"

EXAMPLE_KINDS = ("time_insensitive", "time_sensitive")
SHOT_COUNT = 5

DEFAULT_TRIALS = 20
DEFAULT_POOL_SIZE = 200
SCORING_MAX_TOKENS = 64


class CompletionClient(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResult: ...


@dataclass(frozen=True)
class PromptStrategy:
    """Which demonstrations to use and whether the lead-in names a year."""

    example_kind: str
    mention_time: bool
    target_year: int | None = None

    def __post_init__(self):
        if self.example_kind not in EXAMPLE_KINDS:
            raise ValueError(f"unknown example_kind {self.example_kind!r}")
        if self.target_year is None and (
            self.mention_time or self.example_kind == "time_sensitive"
        ):
            raise ValueError(
                "target_year is required when the lead-in mentions time "
                "or the examples are time-sensitive"
            )

    def lead_in(self) -> str:
        if self.mention_time:
            return TIMED_LEAD_IN.format(year=self.target_year)
        return PLAIN_LEAD_IN


@dataclass(frozen=True)
class FewShotSet:
    """Exactly five (question, answer) demonstrations, in prompt order."""

    examples: tuple[tuple[str, str], ...]
    source: str  # "fixed_fixture" | "selected"

    def __post_init__(self):
        if len(self.examples) != SHOT_COUNT:
            raise ValueError(f"need exactly {SHOT_COUNT} examples, got {len(self.examples)}")
        if self.source not in ("fixed_fixture", "selected"):
            raise ValueError(f"unknown source {self.source!r}")


# Hand-picked demonstrations. The first set is time-insensitive general
# knowledge; the second is time-sensitive late-2022 news.
DEMO_QUESTION = "Which team won the UEFA Europa League?"

INSENSITIVE_DEMO_SHOTS = FewShotSet(
    examples=(
        ("What is the capital of France?", "Paris"),
        ("Who wrote Harry Potter?", "J.K. Rowling"),
        ("Where did the Titanic sink?", "Atlantic Ocean"),
        ("What is the gravity of earth?", "9.807 m/s^2"),
        ("Is the speed of light faster than the speed of sound?", "Yes"),
    ),
    source="fixed_fixture",
)

SENSITIVE_DEMO_SHOTS = FewShotSet(
    examples=(
        (
            "Which Hindi film has the highest domestic net collection currently?",
            "Brahmāstra: Part One – Shiva",
        ),
        ("Where is the NHL Winter Classic taking place?", "Target Field"),
        (
            "Who are the current drivers for the Mercedes-Benz Formula One team?",
            "Lewis Hamilton George Russell",
        ),
        (
            "Who received the Player of the Game award for offense in the most "
            "recent Rose Bowl Game?",
            "Jaxon Smith-Njigba",
        ),
        (
            "Where was the final of the last FIFA Club World Cup held?",
            "Prince Moulay Abdellah Stadium, Rabat",
        ),
    ),
    source="fixed_fixture",
)


def build_qa_prompt(q: str, strat: PromptStrategy, shots: FewShotSet) -> str:
    lead = strat.lead_in()
    parts = [
        f"{QUESTION_LEAD_IN}{sq}\n{lead} {sa}\n\n" for sq, sa in shots.examples
    ]
    parts.append(f"{QUESTION_LEAD_IN}{q}\n{lead}")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Demonstration selection
# ---------------------------------------------------------------------------

def shot_answer_text(
    q: TemporalQuestion, year: int, horizon: int = DEFAULT_HORIZON
) -> str:
    """All answers valid in ``year``, space-joined in stored order."""
    texts: list[str] = []
    for a in q.answers:
        end = a.end_year if a.end_year is not None else horizon
        if a.start_year <= year <= end and a.text not in texts:
            texts.append(a.text)
    return " ".join(texts)


@dataclass
class SelectionReport:
    seed: int = 0
    trials: int = 0
    pool_size: int = 0
    eligible: int = 0
    trial_scores: list[float] = field(default_factory=list)
    best_trial: int = -1
    dev_score: float = 0.0


def select_fewshot(
    client: CompletionClient,
    train: Sequence[TemporalQuestion],
    dev: Sequence[TemporalQuestion],
    strat: PromptStrategy,
    trials: int = DEFAULT_TRIALS,
    pool_size: int = DEFAULT_POOL_SIZE,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
    dev_sample: int | None = None,
    report: SelectionReport | None = None,
) -> FewShotSet:
    """Pick the 5-shot draw from popular train questions that scores best.

    The pool is the ``pool_size`` most popular train questions; each
    trial draws five that have answers in the target year and is scored
    by mean target-year F1 over dev. Ties go to the earliest trial, so
    the outcome is a pure function of the inputs and the seed.
    """
    if strat.target_year is None:
        raise ValueError("selection needs a target year")
    if not dev:
        raise ValueError("dev set is empty")
    missing = [q.id for q in train if q.popularity is None]
    if missing:
        raise ValueError(f"popularity missing on train questions: {missing[:5]}")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    if pool_size > len(train):
        log.warning(
            "pool_size %d exceeds train size %d; using the whole train set",
            pool_size, len(train),
        )
    ranked = sorted(train, key=lambda q: (-(q.popularity or 0.0), q.id))
    pool = ranked[:pool_size]
    eligible = [
        q for q in pool if shot_answer_text(q, strat.target_year, horizon)
    ]
    if len(eligible) < SHOT_COUNT:
        raise ValueError(
            f"only {len(eligible)} pool questions have answers in "
            f"{strat.target_year}; need {SHOT_COUNT}"
        )

    dev_eval = sorted(dev, key=lambda q: q.id)
    if dev_sample is not None and dev_sample < len(dev_eval):
        rng = random.Random(f"{seed}:dev")
        dev_eval = sorted(rng.sample(dev_eval, dev_sample), key=lambda q: q.id)

    rep = report if report is not None else SelectionReport()
    rep.seed, rep.trials = seed, trials
    rep.pool_size, rep.eligible = len(pool), len(eligible)

    best_score, best_trial, best_shots = -1.0, -1, None
    for trial in range(trials):
        rng = random.Random(f"{seed}:{trial}")
        drawn = rng.sample(eligible, SHOT_COUNT)
        shots = FewShotSet(
            examples=tuple(
                (q.text, shot_answer_text(q, strat.target_year, horizon))
                for q in drawn
            ),
            source="selected",
        )
        score = _mean_dev_f1(client, dev_eval, strat, shots, horizon)
        rep.trial_scores.append(score)
        if score > best_score:
            best_score, best_trial, best_shots = score, trial, shots
    assert best_shots is not None
    rep.best_trial, rep.dev_score = best_trial, best_score
    return best_shots


def _mean_dev_f1(
    client: CompletionClient,
    dev: Sequence[TemporalQuestion],
    strat: PromptStrategy,
    shots: FewShotSet,
    horizon: int,
) -> float:
    total = 0.0
    for q in dev:
        req = CompletionRequest(
            prompt=build_qa_prompt(q.text, strat, shots),
            max_tokens=SCORING_MAX_TOKENS,
            temperature=0.0,
            stop_sequences=("\n\n",),
        )
        pred = client.complete(req).texts[0].strip()
        total += f1_at_year(pred, q, strat.target_year, horizon)
    return total / len(dev)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_fewshot_json(
    path: str | Path, shots: FewShotSet, report: SelectionReport | None = None
) -> None:
    payload: dict = {
        "examples": [list(pair) for pair in shots.examples],
        "source": shots.source,
    }
    if report is not None:
        payload["provenance"] = {
            "seed": report.seed,
            "trials": report.trials,
            "pool_size": report.pool_size,
            "eligible": report.eligible,
            "best_trial": report.best_trial,
            "dev_score": report.dev_score,
        }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def read_fewshot_json(path: str | Path) -> tuple[FewShotSet, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    shots = FewShotSet(
        examples=tuple((q, a) for q, a in payload["examples"]),
        source=payload["source"],
    )
    return shots, payload.get("provenance", {})
