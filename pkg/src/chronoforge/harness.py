"""Evaluation runs: prompt, complete, extract, score, and analyze.

A run walks one dataset split with a completion client, scores each
prediction against every year, and sorts records into correct,
misaligned (right answer, wrong year), and incorrect. Analyses over the
records reproduce the per-year curve, the earliest-correct-year
grouping, and the popularity buckets.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .alignment import ADAPTIVE_PROMPT, QA_PROMPT
from .client import CompletionRequest, TransportError
from .kb import DEFAULT_EPOCH, DEFAULT_HORIZON, Dataset, TemporalQuestion, answers_at
from .metrics import (
    MetricConfig,
    YearScoreVector,
    aggregate,
    f1_at_year,
    normalize_text,
    score_prediction,
)
from .prompting import CompletionClient, FewShotSet, PromptStrategy, build_qa_prompt

log = logging.getLogger(__name__)

ANSWER_MARKER = "the answer is:"
CATEGORIES = ("correct", "misaligned", "incorrect")
EXTRACTION_MODES = ("plain", "after_marker")
STOP = ("\n\n",)


@dataclass(frozen=True)
class EvalConfig:
    target_year: int
    hit_threshold: float = 0.8
    epoch: int = DEFAULT_EPOCH
    horizon: int = DEFAULT_HORIZON
    max_tokens: int = 64

    def __post_init__(self):
        if not 0.0 < self.hit_threshold <= 1.0:
            raise ValueError("hit_threshold must be in (0, 1]")
        if not self.epoch <= self.target_year <= self.horizon:
            raise ValueError("target_year outside the year range")

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            year_start=self.epoch, year_end=self.horizon, horizon=self.horizon
        )


@dataclass(frozen=True)
class EvalPrompting:
    """How questions are turned into prompts and outputs into answers.

    ``fewshot`` wraps the question in demonstrations; ``finetuned_qa``
    uses the bare year-free prompt of target-year models; ``adaptive``
    uses the bare prompt of models that state a year before answering.
    """

    kind: str  # "fewshot" | "finetuned_qa" | "adaptive"
    strategy: PromptStrategy | None = None
    shots: FewShotSet | None = None

    def __post_init__(self):
        if self.kind not in ("fewshot", "finetuned_qa", "adaptive"):
            raise ValueError(f"unknown prompting kind {self.kind!r}")
        if self.kind == "fewshot":
            if self.strategy is None or self.shots is None:
                raise ValueError("fewshot prompting needs a strategy and shots")
        elif self.strategy is not None or self.shots is not None:
            raise ValueError(f"{self.kind} prompting takes no strategy or shots")

    def render(self, question_text: str) -> str:
        if self.kind == "fewshot":
            assert self.strategy is not None and self.shots is not None
            return build_qa_prompt(question_text, self.strategy, self.shots)
        if self.kind == "finetuned_qa":
            return QA_PROMPT.format(q=question_text)
        return ADAPTIVE_PROMPT.format(q=question_text)

    @property
    def extraction_mode(self) -> str:
        return "after_marker" if self.kind == "adaptive" else "plain"


@dataclass(frozen=True)
class EvalRecord:
    id: str
    raw_output: str
    prediction: str
    year_scores: YearScoreVector | None
    category: str
    hit_years: frozenset[int]
    failed: bool = False
    marker_missing: bool = False


# ---------------------------------------------------------------------------
# Answer extraction and categorization
# ---------------------------------------------------------------------------

def extract_answer_flagged(raw: str, mode: str) -> tuple[str, bool]:
    """(prediction, marker_missing); the flag only fires in marker mode."""
    if mode not in EXTRACTION_MODES:
        raise ValueError(f"unknown extraction mode {mode!r}")
    if mode == "after_marker":
        idx = raw.casefold().rfind(ANSWER_MARKER)
        if idx >= 0:
            tail = raw[idx + len(ANSWER_MARKER):]
            return tail.split("\n", 1)[0].strip(), False
        return raw.strip().split("\n", 1)[0].strip(), True
    return raw.strip().split("\n", 1)[0].strip(), False


def extract_answer(raw: str, mode: str) -> str:
    return extract_answer_flagged(raw, mode)[0]


def categorize(
    pred: str, q: TemporalQuestion, target_year: int, cfg: EvalConfig
) -> tuple[str, frozenset[int]]:
    """Category plus every year whose answer set the prediction hits."""
    pred_tokens = normalize_text(pred)
    hits = set()
    for year in range(cfg.epoch, cfg.horizon + 1):
        golds = answers_at(q, year, cfg.horizon)
        if not golds:
            continue
        if f1_at_year(pred, q, year, cfg.horizon) >= cfg.hit_threshold or any(
            normalize_text(g) == pred_tokens for g in golds
        ):
            hits.add(year)
    if target_year in hits:
        cat = "correct"
    elif hits:
        cat = "misaligned"
    else:
        cat = "incorrect"
    return cat, frozenset(hits)


# ---------------------------------------------------------------------------
# Running an evaluation
# ---------------------------------------------------------------------------

def run_eval(
    client: CompletionClient,
    split: Sequence[TemporalQuestion],
    prompting: EvalPrompting,
    cfg: EvalConfig,
) -> list[EvalRecord]:
    """One greedy completion per question, id-ordered, failures kept."""
    if not split:
        raise ValueError("cannot evaluate an empty split")
    metric_cfg = cfg.metric_config()
    records: list[EvalRecord] = []
    for q in sorted(split, key=lambda q: q.id):
        req = CompletionRequest(
            prompt=prompting.render(q.text),
            max_tokens=cfg.max_tokens,
            temperature=0.0,
            stop_sequences=STOP,
        )
        try:
            result = client.complete(req)
        except TransportError as exc:
            log.warning("question %s failed: %s", q.id, exc)
            records.append(EvalRecord(
                id=q.id, raw_output="", prediction="", year_scores=None,
                category="incorrect", hit_years=frozenset(), failed=True,
            ))
            continue
        raw = result.texts[0]
        pred, missing = extract_answer_flagged(raw, prompting.extraction_mode)
        if missing:
            log.info("question %s output has no answer marker", q.id)
        scores = score_prediction(pred, q, metric_cfg,
                                  decay_targets=(cfg.target_year,))
        cat, hits = categorize(pred, q, cfg.target_year, cfg)
        records.append(EvalRecord(
            id=q.id, raw_output=raw, prediction=pred, year_scores=scores,
            category=cat, hit_years=hits, marker_missing=missing,
        ))
    return records


# ---------------------------------------------------------------------------
# Aggregation and analyses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    per_year: dict[int, float]
    f_max_mean: float
    f_decay_mean: dict[int, float]
    argmax_year: int
    category_counts: dict[str, int]
    n_scored: int
    n_failed: int
    metadata: dict = field(default_factory=dict)


def build_report(records: Sequence[EvalRecord], cfg: EvalConfig) -> EvalReport:
    scored = [r for r in records if not r.failed]
    if not scored:
        raise ValueError("no scored records to report on")
    agg = aggregate([r.year_scores for r in scored])
    counts = {c: 0 for c in CATEGORIES}
    for r in scored:
        counts[r.category] += 1
    assert sum(counts.values()) == len(scored)
    return EvalReport(
        per_year=agg.per_year,
        f_max_mean=agg.f_max_mean,
        f_decay_mean=agg.f_decay_mean,
        argmax_year=agg.argmax_year(),
        category_counts=counts,
        n_scored=len(scored),
        n_failed=len(records) - len(scored),
        metadata={
            "decoding": "greedy",
            "stop": STOP[0],
            "hit_threshold": cfg.hit_threshold,
            "target_year": cfg.target_year,
        },
    )


def cross_tab(
    records: Sequence[EvalRecord], baseline: Sequence[EvalRecord]
) -> dict[str, dict[str, int]]:
    """Category-by-category counts over ids scored in both runs."""
    base_by_id = {r.id: r for r in baseline if not r.failed}
    table = {a: {b: 0 for b in CATEGORIES} for a in CATEGORIES}
    for r in records:
        if r.failed or r.id not in base_by_id:
            continue
        table[r.category][base_by_id[r.id].category] += 1
    return table


def earliest_correct_grouping(
    records: Sequence[EvalRecord],
    dataset: Dataset,
    cfg: EvalConfig,
    window: tuple[int, int] = (2020, 2022),
) -> dict[int, int]:
    """Correct answers on recently-changed questions, by answer birth year.

    The subset keeps questions whose target-year answers share nothing
    with the year before the window; each correct record is bucketed at
    the earliest year its currently-valid answer took effect.
    """
    lo, hi = window
    baseline_year = lo - 1
    hist = {year: 0 for year in range(lo, hi + 1)}
    for r in records:
        if r.failed or r.category != "correct":
            continue
        q = dataset.by_id(r.id)
        now = answers_at(q, cfg.target_year, cfg.horizon)
        if not now or now & answers_at(q, baseline_year, cfg.horizon):
            continue
        start = min(
            a.start_year for a in q.answers
            if a.start_year <= cfg.target_year
            and (a.end_year is None or cfg.target_year <= a.end_year)
        )
        if lo <= start <= hi:
            hist[start] += 1
        else:
            log.warning("record %s answer start %d outside window", r.id, start)
    return hist


def popularity_buckets(
    records: Sequence[EvalRecord],
    dataset: Dataset,
    n_buckets: int,
    target_year: int,
) -> tuple[list[dict], int]:
    """Equal-count buckets by log pageviews with mean target-year F1.

    Returns (buckets, excluded) where excluded counts records whose
    question has no popularity value.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    rows = []
    excluded = 0
    for r in records:
        if r.failed:
            continue
        q = dataset.by_id(r.id)
        if q.popularity is None:
            excluded += 1
            continue
        rows.append((math.log10(q.popularity + 1.0),
                     r.year_scores.scores[target_year]))
    rows.sort()
    buckets: list[dict] = []
    n = len(rows)
    base, extra = divmod(n, n_buckets)
    start = 0
    for b in range(n_buckets):
        size = base + (1 if b < extra else 0)
        chunk = rows[start:start + size]
        start += size
        if not chunk:
            continue
        buckets.append({
            "log_pop_lo": chunk[0][0],
            "log_pop_hi": chunk[-1][0],
            "n": len(chunk),
            "mean_f1": sum(s for _, s in chunk) / len(chunk),
        })
    return buckets, excluded


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_records_jsonl(path: str | Path, records: Sequence[EvalRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            ys = r.year_scores
            fh.write(json.dumps({
                "id": r.id,
                "raw_output": r.raw_output,
                "prediction": r.prediction,
                "category": r.category,
                "hit_years": sorted(r.hit_years),
                "failed": r.failed,
                "marker_missing": r.marker_missing,
                "scores": None if ys is None
                else {str(y): s for y, s in sorted(ys.scores.items())},
                "f_max": None if ys is None else ys.f_max,
                "f_decay": None if ys is None
                else {str(y): s for y, s in sorted(ys.f_decay.items())},
            }, ensure_ascii=False) + "\n")


def read_records_jsonl(path: str | Path) -> list[EvalRecord]:
    out: list[EvalRecord] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ys = None
            if rec["scores"] is not None:
                ys = YearScoreVector(
                    scores={int(y): s for y, s in rec["scores"].items()},
                    f_max=rec["f_max"],
                    f_decay={int(y): s for y, s in rec["f_decay"].items()},
                )
            out.append(EvalRecord(
                id=rec["id"],
                raw_output=rec["raw_output"],
                prediction=rec["prediction"],
                year_scores=ys,
                category=rec["category"],
                hit_years=frozenset(rec["hit_years"]),
                failed=rec["failed"],
                marker_missing=rec["marker_missing"],
            ))
    return out


def write_plot_data(path: str | Path, runs: Mapping[str, EvalReport]) -> None:
    """Per-year curves for any number of runs, as plain JSON."""
    payload = {
        "runs": {
            name: {
                "per_year": {str(y): v for y, v in sorted(rep.per_year.items())},
                "f_max_mean": rep.f_max_mean,
                "f_decay_mean": {
                    str(y): v for y, v in sorted(rep.f_decay_mean.items())
                },
                "argmax_year": rep.argmax_year,
                "category_counts": rep.category_counts,
                "metadata": rep.metadata,
            }
            for name, rep in runs.items()
        }
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
