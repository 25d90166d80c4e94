"""Run configuration: a small TOML reader and the typed sections it fills.

The interpreter this targets ships no TOML reader, so the subset that
flat run configs need is implemented here: dotted table headers, basic
strings, integers, floats, booleans, and single-line arrays of those.
Dates, inline tables, and multi-line strings are rejected loudly rather
than misread.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .alignment import AlignmentConfig
from .curation import CurationConfig
from .metrics import MetricConfig

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")
_INT = re.compile(r"^[+-]?\d[\d_]*$")
_FLOAT = re.compile(r"^[+-]?\d[\d_]*(?:\.\d[\d_]*)?(?:[eE][+-]?\d+)?$")

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f"}


class TomlError(ValueError):
    """A config file line the subset grammar cannot read."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(ValueError):
    """The file parsed but the values do not form a usable run config."""


def _strip_comment(line: str, line_no: int) -> str:
    out = []
    i = 0
    in_str = False
    while i < len(line):
        c = line[i]
        if in_str:
            if c == "\\":
                out.append(line[i : i + 2])
                i += 2
                continue
            if c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c == "#":
            break
        out.append(c)
        i += 1
    if in_str:
        raise TomlError(line_no, "unterminated string")
    return "".join(out)


def _parse_string(text: str, line_no: int) -> tuple[str, str]:
    # text starts at the opening quote; returns (value, remainder)
    out = []
    i = 1
    while i < len(text):
        c = text[i]
        if c == '"':
            return "".join(out), text[i + 1 :]
        if c == "\\":
            esc = text[i + 1 : i + 2]
            if esc in _ESCAPES:
                out.append(_ESCAPES[esc])
                i += 2
                continue
            if esc == "u" and re.match(r"^[0-9a-fA-F]{4}", text[i + 2 : i + 6]):
                out.append(chr(int(text[i + 2 : i + 6], 16)))
                i += 6
                continue
            raise TomlError(line_no, f"unknown escape \\{esc}")
        out.append(c)
        i += 1
    raise TomlError(line_no, "unterminated string")


def _scalar(tok: str, line_no: int):
    if tok == "true":
        return True
    if tok == "false":
        return False
    if _INT.match(tok):
        return int(tok.replace("_", ""))
    if ("." in tok or "e" in tok or "E" in tok) and _FLOAT.match(tok):
        return float(tok.replace("_", ""))
    raise TomlError(line_no, f"unsupported value {tok!r}")


def _parse_value(text: str, line_no: int):
    text = text.strip()
    if not text:
        raise TomlError(line_no, "missing value")
    if text.startswith('"'):
        value, rest = _parse_string(text, line_no)
        if rest.strip():
            raise TomlError(line_no, f"trailing content {rest.strip()!r}")
        return value
    if text.startswith("["):
        items = []
        rest = text[1:].lstrip()
        while True:
            if not rest:
                raise TomlError(line_no, "arrays must close on the same line")
            if rest.startswith("]"):
                if rest[1:].strip():
                    raise TomlError(line_no, "trailing content after array")
                return items
            if rest.startswith("["):
                raise TomlError(line_no, "nested arrays are not supported")
            if rest.startswith('"'):
                value, rest = _parse_string(rest, line_no)
            else:
                m = re.match(r"[^,\]]+", rest)
                if m is None:
                    raise TomlError(line_no, "malformed array element")
                value = _scalar(m.group(0).strip(), line_no)
                rest = rest[m.end() :]
            items.append(value)
            rest = rest.lstrip()
            if rest.startswith(","):
                rest = rest[1:].lstrip()
            elif not rest.startswith("]"):
                raise TomlError(line_no, "expected ',' or ']' in array")
    return _scalar(text, line_no)


def parse_toml_text(text: str) -> dict:
    """Parse the supported subset into nested plain dicts."""
    root: dict = {}
    current = root
    seen_tables: set[tuple[str, ...]] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw, line_no).strip()
        if not line:
            continue
        if line.startswith("["):
            if line.startswith("[["):
                raise TomlError(line_no, "arrays of tables are not supported")
            if not line.endswith("]"):
                raise TomlError(line_no, "malformed table header")
            parts = tuple(p.strip() for p in line[1:-1].split("."))
            if not all(_BARE_KEY.match(p) for p in parts):
                raise TomlError(line_no, f"bad table name {line[1:-1]!r}")
            if parts in seen_tables:
                raise TomlError(line_no, f"table {'.'.join(parts)!r} defined twice")
            seen_tables.add(parts)
            node = root
            for p in parts:
                child = node.setdefault(p, {})
                if not isinstance(child, dict):
                    raise TomlError(line_no, f"key {p!r} is not a table")
                node = child
            current = node
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not _BARE_KEY.match(key):
            raise TomlError(line_no, f"expected key = value, got {line!r}")
        if key in current:
            raise TomlError(line_no, f"duplicate key {key!r}")
        current[key] = _parse_value(value, line_no)
    return root


def load_toml(path: str | Path) -> dict:
    return parse_toml_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Typed sections
# ---------------------------------------------------------------------------

CLIENT_KINDS = ("stub", "http", "template")


@dataclass(frozen=True)
class ClientSettings:
    """Which completion endpoint answers questions.

    Question generation never uses the stub: offline runs generate via
    canned or template responses, http runs post to the endpoint.
    """

    kind: str = "stub"
    base_url: str = ""
    knowledge_year: int = 2019
    noise_rate: float = 0.0
    dataset: str = ""  # stub corpus; empty = the split stage artifact
    canned_responses: str = ""  # JSON {table_id: generator output}
    max_retries: int = 5
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in CLIENT_KINDS:
            raise ValueError(f"client kind must be one of {CLIENT_KINDS}")
        if self.kind == "http" and not self.base_url:
            raise ValueError("http client needs base_url")


@dataclass(frozen=True)
class QGenSettings:
    sample_years: tuple[int, ...] = (2010, 2020, 2023)
    temperature: float = 1.0
    max_questions: int = 10

    def __post_init__(self):
        object.__setattr__(self, "sample_years", tuple(self.sample_years))


@dataclass(frozen=True)
class SplitSettings:
    seed: int = 0
    dev_size: int = 1000
    test_size: int = 9000

    def __post_init__(self):
        if self.dev_size < 0 or self.test_size < 0:
            raise ValueError("split sizes must be non-negative")


@dataclass(frozen=True)
class EvalSettings:
    target_year: int = 2023
    hit_threshold: float = 0.8
    max_tokens: int = 64
    prompting: str = "fewshot"  # fewshot | finetuned_qa | adaptive
    shots: str = "sensitive"  # sensitive | insensitive
    mention_time: bool = True
    split: str = "test"

    def __post_init__(self):
        if self.prompting not in ("fewshot", "finetuned_qa", "adaptive"):
            raise ValueError(f"unknown prompting {self.prompting!r}")
        if self.shots not in ("sensitive", "insensitive"):
            raise ValueError(f"unknown shot set {self.shots!r}")
        if self.split not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class PageviewSettings:
    fixture_file: str = ""  # offline months per title; empty = live API
    failure_cap: float = 0.2


@dataclass(frozen=True)
class EmitSettings:
    mode: str = "target_year"  # target_year | adaptive

    def __post_init__(self):
        if self.mode not in ("target_year", "adaptive"):
            raise ValueError(f"unknown emit mode {self.mode!r}")


@dataclass(frozen=True)
class AuditSettings:
    n: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("audit sample size must be positive")


@dataclass(frozen=True)
class ServeSettings:
    host: str = "127.0.0.1"
    port: int = 8731


_SECTION_TYPES = {
    "client": ClientSettings,
    "qgen": QGenSettings,
    "curation": CurationConfig,
    "split": SplitSettings,
    "metrics": MetricConfig,
    "alignment": AlignmentConfig,
    "eval": EvalSettings,
    "pageviews": PageviewSettings,
    "emit": EmitSettings,
    "audit": AuditSettings,
    "serve": ServeSettings,
}


def _build_section(cls, mapping: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys {unknown}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run reads, resolved and validated."""

    tables_dir: Path
    workdir: Path
    cache_dir: Path
    client: ClientSettings = field(default_factory=ClientSettings)
    qgen: QGenSettings = field(default_factory=QGenSettings)
    curation: CurationConfig = field(default_factory=CurationConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    alignment: AlignmentConfig | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)
    pageviews: PageviewSettings = field(default_factory=PageviewSettings)
    emit: EmitSettings = field(default_factory=EmitSettings)
    audit: AuditSettings = field(default_factory=AuditSettings)
    serve: ServeSettings = field(default_factory=ServeSettings)

    def require_alignment(self) -> AlignmentConfig:
        if self.alignment is None:
            raise ConfigError("this stage needs an [alignment] section")
        return self.alignment

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Read and validate a config file.

        Relative paths resolve against the file's own directory, so a
        config checked in next to its fixtures works from anywhere.
        The tables directory must already exist; workdir and cache are
        created.
        """
        path = Path(path)
        try:
            data = load_toml(path)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc

        unknown = sorted(set(data) - set(_SECTION_TYPES) - {"paths"})
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}")
        for name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"top-level key {name!r} outside any section")

        base = path.parent

        def resolve(p: str) -> Path:
            q = Path(p)
            return q if q.is_absolute() else base / q

        paths = dict(data.get("paths", {}))
        for key in ("tables_dir", "workdir"):
            if key not in paths:
                raise ConfigError(f"[paths] needs {key}")
        extra = sorted(set(paths) - {"tables_dir", "workdir", "cache_dir"})
        if extra:
            raise ConfigError(f"[paths] has unknown keys {extra}")
        tables_dir = resolve(paths["tables_dir"])
        workdir = resolve(paths["workdir"])
        cache_dir = resolve(paths.get("cache_dir", str(Path(paths["workdir"]) / "cache")))
        if not tables_dir.is_dir():
            raise ConfigError(f"tables_dir {tables_dir} does not exist")
        workdir.mkdir(parents=True, exist_ok=True)
        cache_dir.mkdir(parents=True, exist_ok=True)

        sections = {}
        for name, typ in _SECTION_TYPES.items():
            if name == "alignment":
                continue
            sections[name] = _build_section(typ, dict(data.get(name, {})), name)
        alignment = None
        if "alignment" in data:
            alignment = _build_section(AlignmentConfig, dict(data["alignment"]), "alignment")

        client = sections["client"]
        for attr in ("dataset", "canned_responses"):
            value = getattr(client, attr)
            if value:
                client = dataclasses.replace(client, **{attr: str(resolve(value))})
        pv = sections["pageviews"]
        if pv.fixture_file:
            pv = dataclasses.replace(pv, fixture_file=str(resolve(pv.fixture_file)))

        return cls(
            tables_dir=tables_dir,
            workdir=workdir,
            cache_dir=cache_dir,
            client=client,
            qgen=sections["qgen"],
            curation=sections["curation"],
            split=sections["split"],
            metrics=sections["metrics"],
            alignment=alignment,
            eval=sections["eval"],
            pageviews=pv,
            emit=sections["emit"],
            audit=sections["audit"],
            serve=sections["serve"],
        )
