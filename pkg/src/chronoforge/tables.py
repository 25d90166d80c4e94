"""Ingest pre-extracted Wikipedia tables and find their temporal columns.

Tables arrive as one directory per page: ``<root>/<page_slug>/<name>.csv``
next to a ``meta.json`` sidecar carrying the page title and per-table
section paths. Detection marks columns whose header or cell contents look
like years, and per-row validity intervals come out of a small grammar
(single years, season ranges with century shorthand, open-ended cells).
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

YEAR_MIN = 1000  # detection window; rejects page numbers, counts, phone digits
YEAR_MAX = 2100

# Headers that mark a column as temporal regardless of cell contents.
DEFAULT_HEADER_KEYWORDS = frozenset(
    {"year", "years", "season", "date", "established", "final", "congress"}
)

OPEN_END_WORDS = frozenset({"incumbent", "present", "current", "ongoing"})

CELL_PARSE_THRESHOLD = 0.8


class IntervalParseError(ValueError):
    """Cell text does not match any supported year/range format."""


@dataclass(frozen=True)
class RowInterval:
    """Inclusive validity interval for one table row; open end = still true."""

    start_year: int
    end_year: int | None = None

    def __post_init__(self):
        if self.end_year is not None and self.end_year < self.start_year:
            raise IntervalParseError(
                f"interval end {self.end_year} precedes start {self.start_year}"
            )

    def covers(self, year: int) -> bool:
        return self.start_year <= year and (self.end_year is None or year <= self.end_year)


@dataclass(frozen=True)
class ExtractedTable:
    page_title: str
    section_path: tuple[str, ...]
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    caption: str | None = None
    table_id: str = ""  # source-path slug, e.g. "some_page/table_0"

    def __post_init__(self):
        arity = len(self.header)
        for i, row in enumerate(self.rows):
            if len(row) != arity:
                raise ValueError(
                    f"{self.page_title}: row {i} has {len(row)} cells, header has {arity}"
                )

    def column(self, index: int) -> list[str]:
        return [row[index] for row in self.rows]


@dataclass(frozen=True)
class TemporalColumnSpec:
    column_index: int
    kind: str  # point_year | range | start_end_pair
    paired_end_index: int | None = None


@dataclass
class IngestStats:
    """Mutable counters threaded through a parse_tables pass."""

    tables_read: int = 0
    tables_skipped_empty: int = 0
    files_unreadable: int = 0
    rows_dropped: int = 0
    rows_padded: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# Cell grammar
# ---------------------------------------------------------------------------

_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_MONTH_DATE = re.compile(
    r"^(?:\d{1,2}\s+)?(?:january|february|march|april|may|june|july|august|"
    r"september|october|november|december)\s+(?:\d{1,2},?\s+)?(\d{4})$",
    re.IGNORECASE,
)
_SINGLE_YEAR = re.compile(r"^(\d{4})(?:\.0+)?$")
_RANGE = re.compile(r"^(\d{4})\s*[–—-]\s*(\d{1,4}|[a-zA-Z]+)?$")
_FOOTNOTE = re.compile(r"\[[^\]]*\]")


def _check_year(y: int, cell: str) -> int:
    if not YEAR_MIN <= y <= YEAR_MAX:
        raise IntervalParseError(f"year {y} outside [{YEAR_MIN}, {YEAR_MAX}]: {cell!r}")
    return y


def parse_interval(
    cell: str, context_horizon: int = YEAR_MAX, paired_start: int | None = None
) -> RowInterval:
    """Parse one cell into an inclusive year interval.

    Supported: "1998"; "2000.0"; "2009–10" / "2009-2010" (two-digit
    continuations take the leading year's century, rolling over at 00);
    "2017–present" and bare "Incumbent"/"present" (the latter only with a
    ``paired_start`` from a companion start column); ISO and month-name
    dates, truncated to the year.
    """
    text = _FOOTNOTE.sub("", cell).strip().strip('"').strip()
    if not text:
        raise IntervalParseError("empty cell")

    if text.lower() in OPEN_END_WORDS:
        if paired_start is None:
            raise IntervalParseError(f"open-ended cell {cell!r} without a paired start")
        return RowInterval(paired_start, None)

    m = _ISO_DATE.match(text) or _MONTH_DATE.match(text)
    if m:
        y = _check_year(int(m.group(1)), cell)
        return RowInterval(y, y)

    m = _SINGLE_YEAR.match(text)
    if m:
        y = _check_year(int(m.group(1)), cell)
        return RowInterval(y, y)

    m = _RANGE.match(text)
    if m:
        start = _check_year(int(m.group(1)), cell)
        cont = m.group(2)
        if cont is None or cont == "":
            return RowInterval(start, None)
        if cont.isalpha():
            if cont.lower() in OPEN_END_WORDS:
                return RowInterval(start, None)
            raise IntervalParseError(f"unrecognized range continuation in {cell!r}")
        if len(cont) == 4:
            end = _check_year(int(cont), cell)
        elif len(cont) == 2:
            # century shorthand: 2009–10 → 2010, 1999–00 → 2000
            end = start - start % 100 + int(cont)
            if end < start:
                end += 100
            _check_year(end, cell)
        else:
            raise IntervalParseError(f"ambiguous range continuation in {cell!r}")
        if end < start:
            raise IntervalParseError(f"reversed range in {cell!r}")
        return RowInterval(start, end)

    raise IntervalParseError(f"unparseable temporal cell {cell!r}")


def _cell_parses(cell: str) -> bool:
    try:
        parse_interval(cell)
        return True
    except IntervalParseError:
        # a bare open-ended word is temporal even though it needs a pair
        return cell.strip().lower() in OPEN_END_WORDS


# ---------------------------------------------------------------------------
# Column detection
# ---------------------------------------------------------------------------

def _header_matches(header: str, keywords: frozenset[str]) -> bool:
    words = re.split(r"[^a-z0-9]+", header.lower())
    return any(w in keywords for w in words if w)


def detect_temporal_columns(
    t: ExtractedTable,
    keywords: frozenset[str] = DEFAULT_HEADER_KEYWORDS,
    threshold: float = CELL_PARSE_THRESHOLD,
) -> list[TemporalColumnSpec]:
    """Mark columns that hold years, by header keyword or by cell contents.

    ``Began .../Ended ...`` header pairs merge into one start_end_pair spec;
    a column qualifies alone when its header matches a keyword or at least
    ``threshold`` of its non-empty cells parse under the interval grammar.
    """
    specs: list[TemporalColumnSpec] = []
    lower = [h.lower() for h in t.header]
    began = [i for i, h in enumerate(lower) if h.startswith("began")]
    ended = [i for i, h in enumerate(lower) if h.startswith("ended")]
    paired: set[int] = set()
    for b, e in zip(began, ended):
        specs.append(TemporalColumnSpec(b, "start_end_pair", paired_end_index=e))
        paired.update((b, e))

    for idx in range(len(t.header)):
        if idx in paired:
            continue
        cells = [c for c in t.column(idx) if c.strip()]
        by_header = _header_matches(t.header[idx], keywords)
        by_cells = bool(cells) and sum(map(_cell_parses, cells)) / len(cells) >= threshold
        if not (by_header or by_cells):
            continue
        parsed = []
        for c in cells:
            try:
                parsed.append(parse_interval(c))
            except IntervalParseError:
                pass
        if not parsed and not by_header:
            continue
        pointlike = all(iv.end_year == iv.start_year for iv in parsed)
        specs.append(TemporalColumnSpec(idx, "point_year" if pointlike else "range"))
    return sorted(specs, key=lambda s: s.column_index)


def row_intervals(
    t: ExtractedTable, spec: TemporalColumnSpec
) -> list[RowInterval | None]:
    """Per-row validity intervals under one spec; None where a row fails."""
    out: list[RowInterval | None] = []
    for row in t.rows:
        try:
            if spec.kind == "start_end_pair":
                start = parse_interval(row[spec.column_index]).start_year
                end_cell = row[spec.paired_end_index].strip()
                if not end_cell or end_cell.lower() in OPEN_END_WORDS:
                    out.append(RowInterval(start, None))
                else:
                    out.append(RowInterval(start, parse_interval(end_cell).end_year))
            else:
                out.append(parse_interval(row[spec.column_index]))
        except (IntervalParseError, IndexError):
            out.append(None)
    return out


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _natural_key(name: str) -> tuple:
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name))


def parse_tables(
    source: str | Path,
    ragged: str = "pad",
    stats: IngestStats | None = None,
) -> Iterator[ExtractedTable]:
    """Stream tables out of the per-page CSV layout.

    ``ragged`` says what to do with rows whose arity disagrees with the
    header: "pad" fills short rows / trims long ones, "drop" discards the
    row. Unreadable files and header-only tables are skipped and counted.
    """
    if ragged not in ("pad", "drop"):
        raise ValueError(f"ragged must be 'pad' or 'drop', got {ragged!r}")
    stats = stats if stats is not None else IngestStats()
    root = Path(source)
    if not root.is_dir():
        raise FileNotFoundError(f"table root {root} is not a directory")

    for page_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        meta_path = page_dir / "meta.json"
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            page_title = meta["page_title"]
            sections = meta.get("sections", {})
            captions = meta.get("captions", {})
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            log.warning("skipping page dir %s: bad metadata (%s)", page_dir.name, exc)
            stats.files_unreadable += 1
            continue

        csv_files = sorted(page_dir.glob("*.csv"), key=lambda p: _natural_key(p.stem))
        for path in csv_files:
            try:
                with path.open("r", encoding="utf-8", newline="") as fh:
                    raw = list(csv.reader(fh))
            except (OSError, UnicodeDecodeError, csv.Error) as exc:
                log.warning("skipping table %s: %s", path, exc)
                stats.files_unreadable += 1
                continue
            raw = [r for r in raw if any(c.strip() for c in r)]
            if len(raw) < 2:
                stats.tables_skipped_empty += 1
                continue
            header, body = raw[0], raw[1:]
            arity = len(header)
            rows = []
            for r in body:
                if len(r) == arity:
                    rows.append(tuple(r))
                elif ragged == "drop":
                    stats.rows_dropped += 1
                else:
                    stats.rows_padded += 1
                    rows.append(tuple((r + [""] * arity)[:arity]))
            if not rows:
                stats.tables_skipped_empty += 1
                continue
            stats.tables_read += 1
            yield ExtractedTable(
                page_title=page_title,
                section_path=tuple(sections.get(path.stem, [])),
                header=tuple(header),
                rows=tuple(rows),
                caption=captions.get(path.stem),
                table_id=f"{page_dir.name}/{path.stem}",
            )


def primary_temporal_spec(t: ExtractedTable) -> TemporalColumnSpec | None:
    """The spec that anchors row validity: most parseable rows, then leftmost."""
    best, best_key = None, None
    for spec in detect_temporal_columns(t):
        n = sum(iv is not None for iv in row_intervals(t, spec))
        key = (-n, spec.column_index)
        if best_key is None or key < best_key:
            best, best_key = spec, key
    return best


def extended_row_intervals(
    t: ExtractedTable, spec: TemporalColumnSpec
) -> list[RowInterval | None]:
    """Row intervals with succession semantics for point-year columns.

    Tables like record timelines state only the year a row took effect;
    each row then stays in force until the next one. When the spec is
    point_year and the parseable years run non-decreasing down the table,
    every row's end extends to the year before the next strictly greater
    year, and the final rows stay open. Any other shape is returned as-is.
    """
    raw = row_intervals(t, spec)
    if spec.kind != "point_year":
        return raw
    parsed = [(i, iv.start_year) for i, iv in enumerate(raw) if iv is not None]
    years = [y for _, y in parsed]
    if len(years) < 2 or any(a > b for a, b in zip(years, years[1:])):
        return raw
    distinct = sorted(set(years))
    next_greater = {y: distinct[k + 1] for k, y in enumerate(distinct[:-1])}
    out = list(raw)
    for i, y in parsed:
        if y in next_greater:
            out[i] = RowInterval(y, next_greater[y] - 1)
        else:
            out[i] = RowInterval(y, None)
    return out


# ---------------------------------------------------------------------------
# Contemporary filter
# ---------------------------------------------------------------------------

def covers_every_year(
    intervals: Iterable[RowInterval | None], start: int, end: int
) -> bool:
    ivs = [iv for iv in intervals if iv is not None]
    return all(any(iv.covers(y) for iv in ivs) for y in range(start, end + 1))


def filter_contemporary(
    tables: Iterable[ExtractedTable],
    required_range: tuple[int, int] = (2010, 2023),
    keywords: frozenset[str] = DEFAULT_HEADER_KEYWORDS,
) -> Iterator[ExtractedTable]:
    """Keep tables whose row intervals jointly cover every required year.

    A table passes if any one of its temporal columns yields full coverage
    of ``required_range``. Pure filter, hence idempotent.
    """
    lo, hi = required_range
    for t in tables:
        for spec in detect_temporal_columns(t, keywords=keywords):
            if covers_every_year(extended_row_intervals(t, spec), lo, hi):
                yield t
                break
