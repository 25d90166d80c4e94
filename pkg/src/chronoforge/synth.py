"""Deterministic synthetic corpora for offline pipeline and curve checks.

Everything here draws from a pseudoword vocabulary whose tokens never
repeat within one call. Answers from different periods therefore share
no tokens, token F1 between them is exactly zero, and near-duplicate
similarities across the succession corpus stay negligible. That is what
makes a frozen model's knowledge year recoverable from the per-year F1
curve alone.
"""

from __future__ import annotations

import csv
import json
import random
from pathlib import Path
from typing import Iterable

from .kb import (
    DEFAULT_EPOCH,
    DEFAULT_HORIZON,
    Dataset,
    TemporalQuestion,
    TimedAnswer,
)
from .tables import ExtractedTable

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo",
    "mu", "ne", "po", "ru", "sa", "te", "vu", "za",
)
_WORD_SPACE = len(_SYLLABLES) ** 4


class Namer:
    """Pseudoword factory; every word it hands out is new.

    Words spell the base-16 digits of a running counter in syllables,
    so uniqueness needs no bookkeeping and no RNG.
    """

    def __init__(self) -> None:
        self._next = 0

    def word(self) -> str:
        if self._next >= _WORD_SPACE:
            raise RuntimeError(f"pseudoword space of {_WORD_SPACE} exhausted")
        i = self._next
        self._next += 1
        parts = []
        for _ in range(4):
            parts.append(_SYLLABLES[i % len(_SYLLABLES)])
            i //= len(_SYLLABLES)
        return "".join(parts)

    def name(self) -> str:
        return f"{self.word().capitalize()} {self.word().capitalize()}"


# ---------------------------------------------------------------------------
# Succession tables
# ---------------------------------------------------------------------------

_QG_SKELETONS = (
    "Who currently holds the {role} post of the {page}?",
    "Which person serves as the {role} for the {page} right now?",
    "Who is the sitting {role} recorded by the {page}?",
    "Which officeholder does the {page} list as its {role}?",
)


def synthetic_tables(n: int = 12, seed: int = 0) -> list[ExtractedTable]:
    """Succession tables with unique-token officeholders.

    Each table is a point-year timeline: strictly increasing start
    years, the first at or before the default epoch, so the extension
    rule leaves the final holder open-ended and every year from the
    epoch on has exactly one valid answer. Six or more periods keep
    sensitivity over the default range comfortably above the cutoff.
    """
    if n < 1:
        raise ValueError("n must be positive")
    namer = Namer()
    out: list[ExtractedTable] = []
    for i in range(n):
        rng = random.Random(f"{seed}:table:{i}")
        role = namer.word().capitalize()
        page_a = namer.word().capitalize()
        page_b = namer.word().capitalize()
        n_periods = rng.randint(6, 8)
        starts = [rng.randint(1994, 2000)]
        starts += sorted(rng.sample(range(2001, 2023), n_periods - 1))
        out.append(
            ExtractedTable(
                page_title=f"{page_a} {page_b} Registry",
                section_path=("Succession",) if i % 2 else (),
                header=("Year", role),
                rows=tuple((str(y), namer.name()) for y in starts),
                table_id=f"{page_a.lower()}_{page_b.lower()}_registry/table_0",
            )
        )
    return out


def synthetic_qg_responses(tables: Iterable[ExtractedTable]) -> dict[str, str]:
    """Canned generator output naming each table's holder column."""
    out: dict[str, str] = {}
    for i, t in enumerate(tables):
        role = t.header[1]
        question = _QG_SKELETONS[i % len(_QG_SKELETONS)].format(
            role=role, page=t.page_title
        )
        out[t.table_id] = f"Column 0: {role}\nQuestion 0: {question}"
    return out


def write_corpus(tables: Iterable[ExtractedTable], root: str | Path) -> None:
    """Lay tables out in the per-page CSV format the ingester reads.

    Tables sharing a directory component of their id land in one page
    directory with a shared metadata sidecar; reparsing the result
    reproduces the input tables exactly.
    """
    root = Path(root)
    by_dir: dict[str, list[ExtractedTable]] = {}
    for t in tables:
        if not t.table_id or "/" not in t.table_id:
            raise ValueError(f"table {t.page_title!r} lacks a dir/stem table id")
        by_dir.setdefault(t.table_id.split("/", 1)[0], []).append(t)
    for dirname, group in sorted(by_dir.items()):
        titles = {t.page_title for t in group}
        if len(titles) > 1:
            raise ValueError(
                f"directory {dirname!r} mixes page titles {sorted(titles)}"
            )
        page_dir = root / dirname
        page_dir.mkdir(parents=True, exist_ok=True)
        sections: dict[str, list[str]] = {}
        captions: dict[str, str] = {}
        for t in group:
            stem = t.table_id.split("/", 1)[1]
            sections[stem] = list(t.section_path)
            if t.caption:
                captions[stem] = t.caption
            with (page_dir / f"{stem}.csv").open(
                "w", encoding="utf-8", newline=""
            ) as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(t.header)
                writer.writerows(t.rows)
        meta: dict = {"page_title": group[0].page_title, "sections": sections}
        if captions:
            meta["captions"] = captions
        (page_dir / "meta.json").write_text(
            json.dumps(meta, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# Evaluation dataset
# ---------------------------------------------------------------------------

_EVAL_SKELETONS = (
    "Which designation does the {topic} ledger currently assign?",
    "What is the standing {topic} classification at present?",
    "Which label does the {topic} board list as active today?",
)


def synthetic_eval_dataset(
    n: int = 500,
    seed: int = 0,
    epoch: int = DEFAULT_EPOCH,
    horizon: int = DEFAULT_HORIZON,
) -> Dataset:
    """Questions whose answers churn yearly or by period, tokens disjoint.

    Freeze a stub model at year Y and score it over [epoch, horizon]:
    every question is answerable at Y, so mean F1 there is exactly 1.0,
    while the yearly-churn majority scores zero at every other year and
    pins the curve's argmax to Y. The period questions decay gradually
    on the flanks instead of falling off a cliff.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not epoch < horizon:
        raise ValueError(f"degenerate year range [{epoch}, {horizon}]")
    namer = Namer()
    questions: list[TemporalQuestion] = []
    for qi in range(n):
        rng = random.Random(f"{seed}:q:{qi}")
        topic = namer.word()
        if qi % 5 < 3:
            answers = tuple(
                TimedAnswer(namer.word(), y, y) for y in range(epoch, horizon + 1)
            )
        else:
            n_periods = rng.randint(6, min(10, horizon - epoch))
            starts = [epoch - rng.randint(0, 4)]
            starts += sorted(rng.sample(range(epoch + 1, horizon), n_periods - 1))
            answers = tuple(
                TimedAnswer(namer.word(), s, None if nxt is None else nxt - 1)
                for s, nxt in zip(starts, starts[1:] + [None])
            )
        questions.append(
            TemporalQuestion(
                id=f"syn{qi:04d}",
                text=_EVAL_SKELETONS[qi % len(_EVAL_SKELETONS)].format(topic=topic),
                answers=answers,
                page_title=f"{topic} ledger",
                column="Designation",
            )
        )
    assignment = {q.id: "test" for q in questions}
    return Dataset(tuple(questions), assignment, horizon=horizon, epoch=epoch)
