"""Questions whose answer sets change over the years.

The core data model: an answer carries an inclusive validity interval
``[start_year, end_year]`` (open end = valid through the dataset horizon),
a question owns a set of such answers, and a dataset bundles questions
with a train/dev/test assignment that never splits a Wikipedia page.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_HORIZON = 2023
DEFAULT_EPOCH = 2000

SPLITS = ("train", "dev", "test")


class ValidationError(ValueError):
    """A record or dataset violates a structural invariant."""


class DatasetParseError(ValueError):
    """A serialized dataset line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SplitSizeError(ValueError):
    """Not enough eligible questions to fill the requested dev/test sizes."""


@dataclass(frozen=True)
class TimedAnswer:
    """One answer string valid over an inclusive year interval."""

    text: str
    start_year: int
    end_year: int | None = None  # None = open-ended through the horizon

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("answer text is empty")
        if self.end_year is not None and self.end_year < self.start_year:
            raise ValidationError(
                f"end_year {self.end_year} precedes start_year {self.start_year}"
            )


@dataclass(frozen=True)
class TemporalQuestion:
    """A question with its year-indexed answers and page provenance."""

    id: str
    text: str
    answers: tuple[TimedAnswer, ...]
    page_title: str
    section: str = ""
    column: str = ""
    popularity: float | None = None

    def __post_init__(self):
        if not self.answers:
            raise ValidationError(f"question {self.id!r} has no answers")
        if self.popularity is not None and self.popularity < 0:
            raise ValidationError(f"question {self.id!r} has negative popularity")


@dataclass(frozen=True)
class Dataset:
    """Questions plus a page-disjoint train/dev/test assignment."""

    questions: tuple[TemporalQuestion, ...]
    split_assignment: dict[str, str] = field(default_factory=dict)
    horizon: int = DEFAULT_HORIZON
    epoch: int = DEFAULT_EPOCH

    def __post_init__(self):
        ids = [q.id for q in self.questions]
        if len(ids) != len(set(ids)):
            seen, dups = set(), set()
            for i in ids:
                (dups if i in seen else seen).add(i)
            raise ValidationError(f"duplicate question ids: {sorted(dups)[:5]}")
        if self.split_assignment:
            known = set(ids)
            assigned = set(self.split_assignment)
            if assigned != known:
                missing = sorted(known - assigned)[:5]
                extra = sorted(assigned - known)[:5]
                raise ValidationError(
                    f"split assignment mismatch (unassigned {missing}, unknown {extra})"
                )
            bad = {s for s in self.split_assignment.values() if s not in SPLITS}
            if bad:
                raise ValidationError(f"unknown split names: {sorted(bad)}")
            page_split: dict[str, str] = {}
            for q in self.questions:
                s = self.split_assignment[q.id]
                prev = page_split.setdefault(q.page_title, s)
                if prev != s:
                    raise ValidationError(
                        f"page {q.page_title!r} appears in splits {prev!r} and {s!r}"
                    )

    def by_id(self, qid: str) -> TemporalQuestion:
        try:
            return self._index[qid]
        except AttributeError:
            object.__setattr__(self, "_index", {q.id: q for q in self.questions})
            return self._index[qid]

    def split(self, name: str) -> list[TemporalQuestion]:
        """Questions of one split, id-sorted for deterministic iteration."""
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        out = [q for q in self.questions if self.split_assignment.get(q.id) == name]
        return sorted(out, key=lambda q: q.id)


def answers_at(q: TemporalQuestion, t: int, horizon: int = DEFAULT_HORIZON) -> set[str]:
    """Answer texts valid in year ``t``; open intervals close at the horizon."""
    out = set()
    for a in q.answers:
        end = a.end_year if a.end_year is not None else horizon
        if a.start_year <= t <= end:
            out.add(a.text)
    return out


def sensitivity(
    q: TemporalQuestion, t_s: int, t_e: int, horizon: int = DEFAULT_HORIZON
) -> int:
    """Number of distinct yearly answer sets over ``[t_s, t_e]``.

    A set recurring in disjoint intervals counts once; the empty set
    counts as one distinct set if any year in range has no valid answer.
    """
    if t_s > t_e:
        raise ValueError(f"reversed year range [{t_s}, {t_e}]")
    seen = {frozenset(answers_at(q, t, horizon)) for t in range(t_s, t_e + 1)}
    return len(seen)


def answerable_every_year(
    q: TemporalQuestion, start: int, end: int, horizon: int = DEFAULT_HORIZON
) -> bool:
    return all(answers_at(q, t, horizon) for t in range(start, end + 1))


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------

def _question_record(q: TemporalQuestion, split: str | None) -> dict:
    return {
        "id": q.id,
        "question": q.text,
        "answers": [
            {"text": a.text, "start_year": a.start_year, "end_year": a.end_year}
            for a in q.answers
        ],
        "page_title": q.page_title,
        "section": q.section,
        "column": q.column,
        "popularity": q.popularity,
        "split": split,
    }


def _parse_record(rec: dict, line_no: int) -> tuple[TemporalQuestion, str | None]:
    for key in ("id", "question", "answers", "page_title"):
        if key not in rec:
            raise DatasetParseError(line_no, f"missing field {key!r}")
    if not isinstance(rec["answers"], list) or not rec["answers"]:
        raise DatasetParseError(line_no, "answers must be a non-empty list")
    try:
        answers = tuple(
            TimedAnswer(a["text"], a["start_year"], a.get("end_year"))
            for a in rec["answers"]
        )
        q = TemporalQuestion(
            id=rec["id"],
            text=rec["question"],
            answers=answers,
            page_title=rec["page_title"],
            section=rec.get("section", ""),
            column=rec.get("column", ""),
            popularity=rec.get("popularity"),
        )
    except (KeyError, TypeError) as exc:
        raise DatasetParseError(line_no, f"malformed answer entry: {exc}") from exc
    split = rec.get("split")
    if split is not None and split not in SPLITS:
        raise DatasetParseError(line_no, f"unknown split {split!r}")
    return q, split


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write one JSON record per question with deterministic field order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for q in ds.questions:
            rec = _question_record(q, ds.split_assignment.get(q.id))
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_dataset(
    path: str | Path, horizon: int = DEFAULT_HORIZON, epoch: int = DEFAULT_EPOCH
) -> Dataset:
    questions: list[TemporalQuestion] = []
    assignment: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(line_no, f"invalid JSON: {exc}") from exc
            q, split = _parse_record(rec, line_no)
            questions.append(q)
            if split is not None:
                assignment[q.id] = split
    if assignment and len(assignment) != len(questions):
        raise ValidationError("some records carry a split and some do not")
    return Dataset(tuple(questions), assignment, horizon=horizon, epoch=epoch)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_dataset(
    questions: list[TemporalQuestion] | tuple[TemporalQuestion, ...],
    seed: int,
    dev_size: int = 1000,
    test_size: int = 9000,
    horizon: int = DEFAULT_HORIZON,
    epoch: int = DEFAULT_EPOCH,
) -> Dataset:
    """Assign dev/test from pages answerable every year since the epoch.

    All questions of one page land in the same split. A page is a dev/test
    candidate only if every one of its questions has a non-empty answer set
    for every year in ``[epoch, horizon]``; everything else goes to train.
    Deterministic under a fixed seed.
    """
    questions = tuple(questions)
    pages: dict[str, list[TemporalQuestion]] = {}
    for q in questions:
        pages.setdefault(q.page_title, []).append(q)

    eligible_pages = [
        title
        for title, qs in sorted(pages.items())
        if all(answerable_every_year(q, epoch, horizon, horizon) for q in qs)
    ]
    rng = random.Random(seed)
    rng.shuffle(eligible_pages)

    assignment: dict[str, str] = {}
    dev_left, test_left = dev_size, test_size
    for title in eligible_pages:
        n = len(pages[title])
        if dev_left >= n:
            target, dev_left = "dev", dev_left - n
        elif test_left >= n:
            target, test_left = "test", test_left - n
        else:
            target = "train"
        for q in pages[title]:
            assignment[q.id] = target
    for q in questions:
        assignment.setdefault(q.id, "train")

    if dev_left or test_left:
        n_eligible = sum(len(pages[t]) for t in eligible_pages)
        raise SplitSizeError(
            f"requested dev={dev_size} test={test_size} "
            f"({dev_size + test_size} questions) but only {n_eligible} eligible "
            f"questions exist across {len(eligible_pages)} pages"
        )
    return Dataset(questions, assignment, horizon=horizon, epoch=epoch)
