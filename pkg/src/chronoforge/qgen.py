"""Few-shot question generation over temporal tables.

One generator request per table: a fixed instruction, eight worked
examples shipped as a text asset, then the table itself as a query
block. The response comes back as ``Column i: <name>`` /
``Question i: <text>`` pairs which are parsed and validated against the
table header before anything downstream sees them.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .client import (
    CapabilityError,
    CompletionRequest,
    CompletionResult,
    TransportError,
)
from .kb import DEFAULT_EPOCH, DEFAULT_HORIZON
from .tables import (
    ExtractedTable,
    detect_temporal_columns,
    extended_row_intervals,
    primary_temporal_spec,
)

log = logging.getLogger(__name__)

QUERY_TRAILER = (
    "Generated questions for Query asking for information in a specific column:"
)
REJECTION_SENTENCE = "No questions can be generated."

# Generator output stays short (at most ten one-line questions) but the
# default completion budget of 64 tokens would truncate it.
QG_MAX_TOKENS = 768

_EXAMPLE_SPLIT = re.compile(r"\n\n\n(?=Example \d+:\n)")
_EXAMPLE_HEAD = re.compile(r"(?m)^Example 1:$")
_EXAMPLE_TRAILER = re.compile(
    r"^Generated questions for Example \d+ asking for information in a specific "
    r"column:$",
    re.MULTILINE,
)
_PAIR = re.compile(
    r"^Column\s+\d+:[ \t]*(?P<name>[^\n]*?)[ \t]*\n"
    r"Question\s+\d+:[ \t]*(?P<text>[^\n]*?)[ \t]*$",
    re.MULTILINE,
)


class SkipTable(Exception):
    """Table has no temporal anchor or no rows valid at any sample year."""


class QGFormatError(ValueError):
    """Generator output had neither column/question pairs nor a rejection."""


def load_fewshot_asset(path: str | Path | None = None) -> tuple[str, tuple[str, ...]]:
    """Return (instruction, example blocks) from the packaged prompt asset.

    Joining the pieces back with two blank lines between blocks
    reproduces the asset byte for byte; prompt construction relies on
    that.
    """
    if path is None:
        text = (
            resources.files("chronoforge")
            .joinpath("assets/qg_fewshot.txt")
            .read_text("utf-8")
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    chunks = _EXAMPLE_SPLIT.split(text)
    head = _EXAMPLE_HEAD.search(chunks[0])
    if head is None:
        raise ValueError("few-shot asset has no 'Example 1:' block")
    instruction = chunks[0][: head.start()]
    blocks = [chunks[0][head.start() :]] + chunks[1:]
    return instruction, tuple(blocks)


def example_responses(blocks: Iterable[str]) -> tuple[str, ...]:
    """Answer section of each example block.

    These double as canned generator output: replaying an example's own
    pairs against its source table is the cheapest offline generator.
    """
    out = []
    for block in blocks:
        m = _EXAMPLE_TRAILER.search(block)
        if m is None:
            raise ValueError("example block lacks a trailer line")
        out.append(block[m.end() :].strip("\n"))
    return tuple(out)


@dataclass(frozen=True)
class QGPromptConfig:
    instruction: str
    fewshot_examples: tuple[str, ...]
    sample_years: frozenset[int] = frozenset({2010, 2020, 2023})
    temperature: float = 1.0
    max_questions: int = 10
    epoch: int = DEFAULT_EPOCH
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        object.__setattr__(self, "fewshot_examples", tuple(self.fewshot_examples))
        object.__setattr__(self, "sample_years", frozenset(self.sample_years))
        if not self.fewshot_examples:
            raise ValueError("fewshot_examples is empty")
        if not self.sample_years:
            raise ValueError("sample_years is empty")
        bad = sorted(y for y in self.sample_years if not self.epoch <= y <= self.horizon)
        if bad:
            raise ValueError(
                f"sample years outside [{self.epoch}, {self.horizon}]: {bad}"
            )
        if self.max_questions < 1:
            raise ValueError("max_questions must be positive")

    @classmethod
    def load(cls, path: str | Path | None = None, **kwargs) -> "QGPromptConfig":
        instruction, blocks = load_fewshot_asset(path)
        return cls(instruction=instruction, fewshot_examples=blocks, **kwargs)


@dataclass(frozen=True)
class ColumnQuestion:
    column_name: str
    question_text: str


def describe_table(t: ExtractedTable) -> str:
    # Section-less pages keep the trailing space before the period; the
    # generator was prompted that way and changing it would shift every
    # cached fingerprint.
    return f"this table is about {t.page_title} {', '.join(t.section_path)}."


def build_qg_prompt(t: ExtractedTable, cfg: QGPromptConfig) -> str:
    """Instruction + examples + the table as a query block.

    Only rows whose validity interval touches a sample year are shown to
    the generator; a record that ended before the earliest sample year
    cannot anchor a present-tense question.
    """
    spec = primary_temporal_spec(t)
    if spec is None:
        raise SkipTable(f"{t.table_id or t.page_title}: no temporal column")
    intervals = extended_row_intervals(t, spec)
    keep = [
        row
        for row, iv in zip(t.rows, intervals)
        if iv is not None and any(iv.covers(y) for y in cfg.sample_years)
    ]
    if not keep:
        raise SkipTable(
            f"{t.table_id or t.page_title}: no rows valid at any of "
            f"{sorted(cfg.sample_years)}"
        )

    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(t.header)
    writer.writerows(keep)

    query = [f"Table description: {describe_table(t)}\n"]
    if t.caption:
        query.append(f"Table caption: {t.caption}\n")
    query.append("Table content:\n")
    query.append(buf.getvalue())
    query.append("\n")
    query.append(QUERY_TRAILER)

    preamble = cfg.instruction + "\n\n\n".join(cfg.fewshot_examples)
    return preamble + "\nQuery:\n" + "".join(query)


def _norm_col(s: str) -> str:
    return " ".join(s.split()).casefold()


def parse_qg_response(text: str, t: ExtractedTable) -> list[ColumnQuestion]:
    """Extract validated column/question pairs from generator output.

    Pairs naming a column absent from the header are dropped, as is any
    pair reusing a column already claimed by an earlier one. An output
    consisting of the rejection sentence parses to an empty list.
    """
    matches = list(_PAIR.finditer(text))
    if not matches:
        if REJECTION_SENTENCE in text:
            return []
        raise QGFormatError(
            f"no column/question pairs and no rejection in {len(text)}-char output"
        )
    canonical = {}
    for cell in t.header:
        canonical.setdefault(_norm_col(cell), cell)
    out: list[ColumnQuestion] = []
    used: set[str] = set()
    for m in matches:
        name, question = m.group("name"), m.group("text")
        key = _norm_col(name)
        if key not in canonical:
            log.debug("dropping pair for unknown column %r", name)
            continue
        if key in used or not question:
            continue
        used.add(key)
        out.append(ColumnQuestion(column_name=canonical[key], question_text=question))
    return out


@dataclass
class QGReport:
    tables_seen: int = 0
    tables_with_pairs: int = 0
    tables_skipped: int = 0
    tables_rejected: int = 0  # rejection sentence, or nothing survived validation
    tables_failed: int = 0
    pairs_emitted: int = 0
    failures: list[dict] = field(default_factory=list)


def generate_questions(
    client,
    tables: Iterable[ExtractedTable],
    cfg: QGPromptConfig,
    report: QGReport | None = None,
) -> Iterator[tuple[ExtractedTable, ColumnQuestion]]:
    """One request per table, yielding validated pairs in table order.

    Transport failures land in ``report.failures`` and the run
    continues. An unparseable response is retried once; with a caching
    client the retry replays the identical text, so the second attempt
    only helps against a live stochastic endpoint.
    """
    report = report if report is not None else QGReport()
    for t in tables:
        report.tables_seen += 1
        label = t.table_id or t.page_title
        try:
            prompt = build_qg_prompt(t, cfg)
        except SkipTable as exc:
            report.tables_skipped += 1
            log.info("skip %s", exc)
            continue
        request = CompletionRequest(
            prompt=prompt, max_tokens=QG_MAX_TOKENS, temperature=cfg.temperature
        )
        pairs = None
        failure = None
        for attempt in (0, 1):
            try:
                result = client.complete(request)
            except TransportError as exc:
                failure = {"table_id": t.table_id, "page_title": t.page_title,
                           "reason": "transport", "detail": str(exc)}
                break
            try:
                pairs = parse_qg_response(result.texts[0], t)
                break
            except QGFormatError as exc:
                if attempt == 0:
                    log.info("re-queueing %s after unparseable output", label)
                    continue
                failure = {"table_id": t.table_id, "page_title": t.page_title,
                           "reason": "format", "detail": str(exc)}
        if failure is not None:
            report.tables_failed += 1
            report.failures.append(failure)
            log.warning("giving up on %s: %s", label, failure["reason"])
            continue
        if not pairs:
            report.tables_rejected += 1
            continue
        report.tables_with_pairs += 1
        for pair in pairs[: cfg.max_questions]:
            report.pairs_emitted += 1
            yield t, pair


def write_pairs_jsonl(
    path: str | Path, stream: Iterable[tuple[ExtractedTable, ColumnQuestion]]
) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for t, pair in stream:
            rec = {
                "page_title": t.page_title,
                "table_id": t.table_id,
                "column": pair.column_name,
                "question": pair.question_text,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_pairs_jsonl(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            for key in ("page_title", "table_id", "column", "question"):
                if key not in rec:
                    raise ValueError(f"{path}:{line_no}: missing {key!r}")
            out.append(rec)
    return out


class TemplateQGClient:
    """Offline stand-in for the question generator.

    Maps each table's exact prompt to a canned response; tables without
    one fall back to deterministic template questions over their
    non-temporal columns. Prompts it has never seen raise
    TransportError, same as a live client with a dead endpoint.
    """

    _TEMPLATES = (
        'What is the "{col}" entry on the {title} table?',
        'Which value does the {title} table list under "{col}"?',
        'What does the {title} table currently show for "{col}"?',
    )

    def __init__(
        self,
        tables: Iterable[ExtractedTable],
        cfg: QGPromptConfig,
        canned: dict[str, str] | None = None,
    ) -> None:
        canned = dict(canned or {})
        self._by_prompt: dict[str, str] = {}
        for t in tables:
            try:
                prompt = build_qg_prompt(t, cfg)
            except SkipTable:
                continue
            text = canned.get(t.table_id)
            if text is None:
                text = self._template_response(t, cfg)
            self._by_prompt[prompt] = text

    def _template_response(self, t: ExtractedTable, cfg: QGPromptConfig) -> str:
        claimed = set()
        for spec in detect_temporal_columns(t):
            claimed.add(spec.column_index)
            if spec.paired_end_index is not None:
                claimed.add(spec.paired_end_index)
        cols = [i for i in range(len(t.header)) if i not in claimed]
        if not cols:
            cols = list(range(len(t.header)))
        lines = []
        for n, i in enumerate(cols[: cfg.max_questions]):
            template = self._TEMPLATES[n % len(self._TEMPLATES)]
            question = template.format(col=t.header[i], title=t.page_title)
            lines.append(f"Column {n}: {t.header[i]}\nQuestion {n}: {question}")
        return "\n\n".join(lines) if lines else REJECTION_SENTENCE

    def complete(self, request: CompletionRequest) -> CompletionResult:
        if request.want_logprobs:
            raise CapabilityError("template generator produces no logprobs")
        text = self._by_prompt.get(request.prompt)
        if text is None:
            raise TransportError("prompt does not match any known table")
        return CompletionResult(texts=(text,) * request.n_samples)
