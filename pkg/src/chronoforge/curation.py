"""Filters that turn generated (table, column, question) triples into a
clean question set.

The pipeline is: answer extraction with shared-period grouping, answer
cleaning, noise filters, an answer-sensitivity floor, BM25-normalized
near-duplicate removal, and answer-bias downsampling. Every stage
reports attrition so a run can be audited after the fact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .bm25 import BM25Index
from .kb import (
    DEFAULT_EPOCH,
    DEFAULT_HORIZON,
    TemporalQuestion,
    TimedAnswer,
    answers_at,
    sensitivity,
)
from .tables import (
    ExtractedTable,
    RowInterval,
    TemporalColumnSpec,
    primary_temporal_spec,
    row_intervals,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurationConfig:
    min_sensitivity: int = 5
    max_avg_answers_per_year: float = 5.0
    max_avg_answer_len: float = 10.0
    dup_hi: float = 0.9
    dup_q: float = 0.8
    dup_a: float = 0.5
    bias_occurrence_cap: int = 300
    bias_keep_rate: float = 0.10
    seed: int = 0
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    epoch: int = DEFAULT_EPOCH
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        if self.min_sensitivity < 1:
            raise ValueError("min_sensitivity must be at least 1")
        if self.max_avg_answers_per_year <= 0 or self.max_avg_answer_len <= 0:
            raise ValueError("noise thresholds must be positive")
        for name in ("dup_hi", "dup_q", "dup_a", "bias_keep_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.bias_occurrence_cap < 1:
            raise ValueError("bias_occurrence_cap must be positive")
        if self.epoch > self.horizon:
            raise ValueError("epoch after horizon")


# ---------------------------------------------------------------------------
# Answer extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtractStats:
    rows_unparseable: int = 0
    cells_empty: int = 0
    succession_extended: bool = False


def extract_answers(
    t: ExtractedTable,
    spec: TemporalColumnSpec,
    column: str,
    stats: ExtractStats | None = None,
) -> list[TimedAnswer]:
    """Pair each row's cell in ``column`` with its validity interval.

    Point-year tables whose (text, year) entries are strictly
    increasing after exact-duplicate merging are treated as succession
    timelines: each entry stays valid until the next one takes over,
    the last indefinitely. Anything else keeps its interval verbatim,
    so rows sharing a period contribute co-valid answers.
    """
    stats = stats if stats is not None else ExtractStats()
    idx = t.header.index(column)
    entries: list[tuple[str, RowInterval]] = []
    for row, iv in zip(t.rows, row_intervals(t, spec)):
        if iv is None:
            stats.rows_unparseable += 1
            continue
        text = row[idx].strip()
        if not text:
            stats.cells_empty += 1
            continue
        entries.append((text, iv))

    if spec.kind == "point_year" and len(entries) >= 2:
        merged: list[tuple[str, RowInterval]] = []
        seen: set[tuple[str, int]] = set()
        for text, iv in entries:
            key = (text, iv.start_year)
            if key in seen:
                continue
            seen.add(key)
            merged.append((text, iv))
        years = [iv.start_year for _, iv in merged]
        if all(a < b for a, b in zip(years, years[1:])):
            stats.succession_extended = True
            entries = [
                (text, RowInterval(iv.start_year,
                                   years[k + 1] - 1 if k + 1 < len(merged) else None))
                for k, (text, iv) in enumerate(merged)
            ]
        else:
            entries = merged

    return [TimedAnswer(text, iv.start_year, iv.end_year) for text, iv in entries]


# ---------------------------------------------------------------------------
# Answer cleaning
# ---------------------------------------------------------------------------

_SENTINELS = frozenset({"n/a", "tba", "tbd", "-", "–", "—"})
_TAG = re.compile(r"<[^>]*>")
_TEMPLATE = re.compile(r"\{\{.*?\}\}", re.DOTALL)
_COUNTRY_CODE = re.compile(r"^[A-Z]{2,3}\s+")


def clean_answer(text: str) -> str | None:
    """Normalized answer text, or None when the cell carries no answer."""
    s = _TAG.sub(" ", text)
    s = _TEMPLATE.sub(" ", s)
    s = s.replace("{", " ").replace("}", " ")
    s = " ".join(s.split())
    m = _COUNTRY_CODE.match(s)
    if m:
        rest = s[m.end():]
        # only a code prefixing a capitalized name; "USA 2010" stays whole
        if rest[:1].isupper() and rest[:1].isalpha():
            s = rest
    if not s or s.casefold() in _SENTINELS:
        return None
    return s


# ---------------------------------------------------------------------------
# Noise filter
# ---------------------------------------------------------------------------

def noise_filter(q: TemporalQuestion, cfg: CurationConfig) -> str | None:
    """None to keep, else the rejection reason."""
    sizes = [
        len(answers_at(q, y, cfg.horizon))
        for y in range(cfg.epoch, cfg.horizon + 1)
    ]
    covered = [s for s in sizes if s]
    if covered and sum(covered) / len(covered) > cfg.max_avg_answers_per_year:
        return "avg_answers"
    lens = [len(a.text.split()) for a in q.answers]
    if lens and sum(lens) / len(lens) > cfg.max_avg_answer_len:
        return "avg_len"
    return None


# ---------------------------------------------------------------------------
# Near-duplicate removal
# ---------------------------------------------------------------------------

def answer_blob(q: TemporalQuestion) -> str:
    """Order-free similarity operand: sorted answer texts, concatenated."""
    return " ".join(sorted(a.text for a in q.answers))


def is_duplicate_pair(q_sim: float, a_sim: float, cfg: CurationConfig) -> bool:
    return (
        q_sim > cfg.dup_hi
        or a_sim > cfg.dup_hi
        or (q_sim > cfg.dup_q and a_sim > cfg.dup_a)
    )


def _fired_rule(q_sim: float, a_sim: float, cfg: CurationConfig) -> str:
    if q_sim > cfg.dup_hi:
        return "question"
    if a_sim > cfg.dup_hi:
        return "answer"
    if q_sim > cfg.dup_q and a_sim > cfg.dup_a:
        return "joint"
    return "transitive"


def dedup(
    questions: Sequence[TemporalQuestion], cfg: CurationConfig
) -> tuple[list[TemporalQuestion], list[dict]]:
    """Drop near-duplicates, returning survivors plus a removal log.

    Similarity is normalized per query side, so each pair is scored in
    both directions and the max is used; the duplicate relation is then
    symmetric and clustering is plain connected components. Within a
    cluster the question with the fewest words survives, ties broken by
    lexicographic id.
    """
    qs = sorted(questions, key=lambda q: q.id)
    n = len(qs)
    q_index = BM25Index([q.text for q in qs], k1=cfg.bm25_k1, b=cfg.bm25_b)
    a_index = BM25Index([answer_blob(q) for q in qs], k1=cfg.bm25_k1, b=cfg.bm25_b)

    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in sorted(q_index.candidates(i) | a_index.candidates(i)):
            if j <= i:
                continue
            q_sim = max(q_index.sim(i, j), q_index.sim(j, i))
            a_sim = max(a_index.sim(i, j), a_index.sim(j, i))
            if is_duplicate_pair(q_sim, a_sim, cfg):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)

    kept: list[TemporalQuestion] = []
    removal_log: list[dict] = []
    for members in clusters.values():
        members.sort(key=lambda i: (len(qs[i].text.split()), qs[i].id))
        survivor = members[0]
        kept.append(qs[survivor])
        for i in members[1:]:
            q_sim = max(q_index.sim(i, survivor), q_index.sim(survivor, i))
            a_sim = max(a_index.sim(i, survivor), a_index.sim(survivor, i))
            removal_log.append({
                "removed_id": qs[i].id,
                "kept_id": qs[survivor].id,
                "question_sim": round(q_sim, 6),
                "answer_sim": round(a_sim, 6),
                "rule": _fired_rule(q_sim, a_sim, cfg),
            })
    kept.sort(key=lambda q: q.id)
    removal_log.sort(key=lambda r: r["removed_id"])
    return kept, removal_log


# ---------------------------------------------------------------------------
# Answer-bias reduction
# ---------------------------------------------------------------------------

_NUMERIC_JUNK = re.compile(r"[,\s%$€£¥]")


def is_numeric_answer(text: str) -> bool:
    s = _NUMERIC_JUNK.sub("", text)
    if not s:
        return False
    try:
        float(s)
    except ValueError:
        return False
    return True


def answer_occurrences(questions: Iterable[TemporalQuestion]) -> Counter:
    """How many questions carry each answer text (distinct per question)."""
    counts: Counter = Counter()
    for q in questions:
        for text in {a.text for a in q.answers}:
            counts[text] += 1
    return counts


def bias_flag(
    q: TemporalQuestion, occurrences: Mapping[str, int], cap: int
) -> bool:
    return any(
        is_numeric_answer(a.text) or occurrences.get(a.text, 0) > cap
        for a in q.answers
    )


def _keep_draw(seed: int, qid: str) -> float:
    digest = hashlib.sha256(f"{seed}:bias:{qid}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def bias_reduction(
    questions: Sequence[TemporalQuestion],
    cfg: CurationConfig,
    occurrences: Mapping[str, int] | None = None,
) -> list[TemporalQuestion]:
    """Downsample questions whose answers are numeric or ubiquitous.

    The keep decision hashes (seed, question id), so it is independent
    of input order and of what else is in the batch.
    """
    occ = occurrences if occurrences is not None else answer_occurrences(questions)
    out = []
    for q in questions:
        if not bias_flag(q, occ, cfg.bias_occurrence_cap):
            out.append(q)
        elif _keep_draw(cfg.seed, q.id) < cfg.bias_keep_rate:
            out.append(q)
    return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class StageReport:
    stage: str
    input_count: int
    kept: int
    dropped: int
    reasons: dict[str, int] = field(default_factory=dict)


@dataclass
class CurationResult:
    questions: list[TemporalQuestion]
    attrition: list[StageReport]
    removal_log: list[dict]


def question_id(table_id: str, column: str, question: str) -> str:
    h = hashlib.sha256(f"{table_id}|{column}|{question}".encode("utf-8"))
    return "q" + h.hexdigest()[:12]


def curate(
    pairs: Iterable[Mapping[str, str]],
    tables: Iterable[ExtractedTable],
    cfg: CurationConfig,
) -> CurationResult:
    """Run every stage over generated pairs, keeping attrition books.

    ``pairs`` are records with page_title/table_id/column/question;
    reason histograms use plain keys for per-question drop reasons and
    "note:"-prefixed keys for informational counts (those do not add up
    into the dropped column).
    """
    by_id: dict[str, ExtractedTable] = {}
    for t in tables:
        if t.table_id in by_id:
            log.warning("duplicate table id %r; keeping the first", t.table_id)
            continue
        by_id[t.table_id] = t
    spec_cache: dict[str, TemporalColumnSpec | None] = {}

    attrition: list[StageReport] = []

    def run_stage(stage, items, fn):
        reasons: dict[str, int] = {}
        kept = []
        for item in items:
            verdict = fn(item, reasons)
            if verdict is None:
                kept.append(item)
            else:
                reasons[verdict] = reasons.get(verdict, 0) + 1
        dropped = sum(v for k, v in reasons.items() if not k.startswith("note:"))
        attrition.append(StageReport(stage, len(items), len(kept), dropped, reasons))
        return kept

    # extract: pairs -> questions
    pairs = list(pairs)
    questions: list[TemporalQuestion] = []
    extract_reasons: dict[str, int] = {}
    seen_ids: set[str] = set()
    for rec in pairs:
        t = by_id.get(rec["table_id"])
        if t is None:
            extract_reasons["missing_table"] = extract_reasons.get("missing_table", 0) + 1
            continue
        if t.table_id not in spec_cache:
            spec_cache[t.table_id] = primary_temporal_spec(t)
        spec = spec_cache[t.table_id]
        if spec is None:
            extract_reasons["no_temporal_spec"] = extract_reasons.get("no_temporal_spec", 0) + 1
            continue
        column = rec["column"]
        if column not in t.header:
            extract_reasons["missing_column"] = extract_reasons.get("missing_column", 0) + 1
            continue
        qid = question_id(t.table_id, column, rec["question"])
        if qid in seen_ids:
            extract_reasons["duplicate_pair"] = extract_reasons.get("duplicate_pair", 0) + 1
            continue
        stats = ExtractStats()
        answers = extract_answers(t, spec, column, stats)
        if stats.rows_unparseable:
            key = "note:rows_unparseable"
            extract_reasons[key] = extract_reasons.get(key, 0) + stats.rows_unparseable
        if stats.cells_empty:
            key = "note:cells_empty"
            extract_reasons[key] = extract_reasons.get(key, 0) + stats.cells_empty
        if stats.succession_extended:
            key = "note:succession_extended"
            extract_reasons[key] = extract_reasons.get(key, 0) + 1
        if not answers:
            extract_reasons["no_answers"] = extract_reasons.get("no_answers", 0) + 1
            continue
        seen_ids.add(qid)
        questions.append(TemporalQuestion(
            id=qid,
            text=rec["question"],
            answers=tuple(answers),
            page_title=t.page_title,
            section=", ".join(t.section_path),
            column=column,
        ))
    dropped = sum(v for k, v in extract_reasons.items() if not k.startswith("note:"))
    attrition.append(StageReport(
        "extract", len(pairs), len(questions), dropped, extract_reasons))

    # clean: rewrite answer texts, drop questions with nothing left
    clean_reasons: dict[str, int] = {}
    clean_out: list[TemporalQuestion] = []
    for q in questions:
        cleaned: list[TimedAnswer] = []
        seen: set[tuple[str, int, int | None]] = set()
        rejected = 0
        for a in q.answers:
            text = clean_answer(a.text)
            if text is None:
                rejected += 1
                continue
            key = (text, a.start_year, a.end_year)
            if key in seen:
                continue
            seen.add(key)
            cleaned.append(TimedAnswer(text, a.start_year, a.end_year))
        if rejected:
            clean_reasons["note:answers_rejected"] = (
                clean_reasons.get("note:answers_rejected", 0) + rejected)
        if cleaned:
            clean_out.append(replace(q, answers=tuple(cleaned)))
        else:
            clean_reasons["all_answers_rejected"] = (
                clean_reasons.get("all_answers_rejected", 0) + 1)
    attrition.append(StageReport(
        "clean", len(questions), len(clean_out),
        len(questions) - len(clean_out), clean_reasons))
    questions = clean_out

    questions = run_stage(
        "noise", questions, lambda q, _r: noise_filter(q, cfg))

    questions = run_stage(
        "sensitivity", questions,
        lambda q, _r: None
        if sensitivity(q, cfg.epoch, cfg.horizon, cfg.horizon) >= cfg.min_sensitivity
        else "low_sensitivity",
    )

    deduped, removal_log = dedup(questions, cfg)
    attrition.append(StageReport(
        "dedup", len(questions), len(deduped), len(questions) - len(deduped),
        {"duplicate": len(questions) - len(deduped)} if removal_log else {},
    ))
    questions = deduped

    occurrences = answer_occurrences(questions)
    flagged = {q.id for q in questions if bias_flag(q, occurrences, cfg.bias_occurrence_cap)}
    kept = bias_reduction(questions, cfg, occurrences)
    bias_reasons: dict[str, int] = {}
    n_dropped = len(questions) - len(kept)
    if n_dropped:
        bias_reasons["bias_sampled_out"] = n_dropped
    if flagged:
        bias_reasons["note:flagged"] = len(flagged)
    attrition.append(StageReport(
        "bias", len(questions), len(kept), n_dropped, bias_reasons))

    kept.sort(key=lambda q: q.id)
    return CurationResult(kept, attrition, removal_log)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_attrition_csv(path: str | Path, reports: Sequence[StageReport]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "input_count", "kept", "dropped", "reason_histogram_json"])
        for r in reports:
            w.writerow([
                r.stage, r.input_count, r.kept, r.dropped,
                json.dumps(r.reasons, sort_keys=True, ensure_ascii=False),
            ])


def write_removal_log(path: str | Path, entries: Sequence[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in entries:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
