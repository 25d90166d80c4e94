"""Token-level F1 and its year-indexed variants.

Scores a prediction against the answers valid in each year, plus two
summaries: the best score over the whole evaluation range, and a decayed
score that discounts a year-``i`` match by ``alpha**|i - j|`` relative to
a target year ``j``.
"""

from __future__ import annotations

import csv
import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .kb import DEFAULT_HORIZON, TemporalQuestion, answers_at

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class MetricConfig:
    alpha: float = 0.8
    year_start: int = 2000
    year_end: int = DEFAULT_HORIZON
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.year_start > self.year_end:
            raise ValueError(f"bad year range [{self.year_start}, {self.year_end}]")

    @property
    def years(self) -> range:
        return range(self.year_start, self.year_end + 1)


@dataclass(frozen=True)
class YearScoreVector:
    """Per-year F1 for one prediction, with max and decayed summaries."""

    scores: dict[int, float]
    f_max: float
    f_decay: dict[int, float] = field(default_factory=dict)


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    tokens = s.lower().translate(_PUNCT).split()
    return [t for t in tokens if t not in _ARTICLES]


def token_f1(pred: str, gold: str) -> float:
    """Multiset token overlap F1. Both sides empty scores 1, one empty 0."""
    p = normalize_text(pred)
    g = normalize_text(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def f1_at_year(
    pred: str, q: TemporalQuestion, j: int, horizon: int = DEFAULT_HORIZON
) -> float:
    """Best F1 against any answer valid in year ``j``; 0 if none is."""
    golds = answers_at(q, j, horizon)
    if not golds:
        return 0.0
    return max(token_f1(pred, g) for g in golds)


def f_max(pred: str, q: TemporalQuestion, cfg: MetricConfig) -> float:
    return max(f1_at_year(pred, q, i, cfg.horizon) for i in cfg.years)


def f_decay(pred: str, q: TemporalQuestion, j: int, cfg: MetricConfig) -> float:
    return max(
        f1_at_year(pred, q, i, cfg.horizon) * cfg.alpha ** abs(i - j)
        for i in cfg.years
    )


def score_prediction(
    pred: str,
    q: TemporalQuestion,
    cfg: MetricConfig,
    decay_targets: tuple[int, ...] = (),
) -> YearScoreVector:
    """One pass over the year range, reusing per-year scores for the summaries."""
    scores = {i: f1_at_year(pred, q, i, cfg.horizon) for i in cfg.years}
    best = max(scores.values())
    decay = {
        j: max(scores[i] * cfg.alpha ** abs(i - j) for i in cfg.years)
        for j in decay_targets
    }
    return YearScoreVector(scores=scores, f_max=best, f_decay=decay)


@dataclass(frozen=True)
class AggregateReport:
    per_year: dict[int, float]
    f_max_mean: float
    f_decay_mean: dict[int, float]
    n: int

    def argmax_year(self) -> int:
        """Year of the curve peak (earliest year on ties)."""
        return min(self.per_year, key=lambda y: (-self.per_year[y], y))


def aggregate(records: list[YearScoreVector]) -> AggregateReport:
    """Arithmetic means per year and per summary metric."""
    if not records:
        raise ValueError("cannot aggregate zero records")
    n = len(records)
    years = sorted(records[0].scores)
    per_year = {y: sum(r.scores[y] for r in records) / n for y in years}
    fmax = sum(r.f_max for r in records) / n
    targets = sorted(records[0].f_decay)
    fdec = {j: sum(r.f_decay[j] for r in records) / n for j in targets}
    return AggregateReport(per_year=per_year, f_max_mean=fmax, f_decay_mean=fdec, n=n)


def as_percent(x: float) -> float:
    """Scores are reported as percentages with one decimal."""
    return round(100.0 * x, 1)


def write_report_csv(report: AggregateReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "mean_f1"])
        for year in sorted(report.per_year):
            w.writerow([year, as_percent(report.per_year[year])])
        w.writerow(["f_max", as_percent(report.f_max_mean)])
        for j in sorted(report.f_decay_mean):
            w.writerow([f"f_decay@{j}", as_percent(report.f_decay_mean[j])])


def write_report_json(
    reports: dict[str, AggregateReport], path: str | Path
) -> None:
    """Plot-ready per-year curves for one or more runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        name: {
            "per_year": {str(y): r.per_year[y] for y in sorted(r.per_year)},
            "f_max": r.f_max_mean,
            "f_decay": {str(j): r.f_decay_mean[j] for j in sorted(r.f_decay_mean)},
            "n": r.n,
        }
        for name, r in reports.items()
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
