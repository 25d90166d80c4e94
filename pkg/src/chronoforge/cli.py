"""Pipeline orchestration: one subcommand per stage, one config file.

Every stage reads its predecessor's artifact out of the workdir and
writes its own next to a manifest recording input hashes, the hash of
the settings it consumed, and output hashes. Rerunning with nothing
changed short-circuits on the manifest; artifacts carry no timestamps,
so two runs from the same inputs are bitwise identical.

Exit codes: 0 success, 2 configuration problem, 3 missing stage input,
4 transport failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import random
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import unquote

from .alignment import (
    assign_all,
    emit_adaptive,
    emit_hparams,
    emit_target_year,
    greedy_confidence,
    score_questions,
    select_training,
    write_training_jsonl,
)
from .client import (
    CapabilityError,
    CompletionRequest,
    HTTPCompletionClient,
    StubOracleClient,
    StubOracleConfig,
    TransportError,
)
from .config import ConfigError, RunConfig, TomlError
from .curation import curate, write_attrition_csv, write_removal_log
from .harness import (
    EvalConfig,
    EvalPrompting,
    build_report,
    read_records_jsonl,
    run_eval,
    write_plot_data,
    write_records_jsonl,
)
from .kb import Dataset, SplitSizeError, load_dataset, save_dataset, split_dataset
from .pageviews import AnnotationAborted, PageviewClient, annotate_popularity
from .prompting import (
    INSENSITIVE_DEMO_SHOTS,
    SENSITIVE_DEMO_SHOTS,
    PromptStrategy,
)
from .qgen import (
    QGPromptConfig,
    QGReport,
    TemplateQGClient,
    generate_questions,
    read_pairs_jsonl,
    write_pairs_jsonl,
)
from .tables import ExtractedTable, IngestStats, parse_tables

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_TRANSPORT = 4


class MissingInput(RuntimeError):
    """A predecessor artifact is absent; the message names the stage."""

    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing input {path}; run '{producer}' first")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingInput(path, producer)
    return path


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_path(path: Path) -> str:
    """File hash, or for a directory the hash of its sorted file hashes."""
    if path.is_dir():
        entries = []
        for p in sorted(path.rglob("*")):
            if p.is_file():
                entries.append(f"{p.relative_to(path).as_posix()}:{_sha256_path(p)}")
        return _sha256_bytes("\n".join(entries).encode("utf-8"))
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _params_hash(params: dict) -> str:
    return _sha256_bytes(
        json.dumps(params, sort_keys=True, ensure_ascii=False, default=str).encode(
            "utf-8"
        )
    )


def _manifest_path(workdir: Path, stage: str) -> Path:
    return workdir / f"{stage}.manifest.json"


def _stage_fresh(
    workdir: Path,
    stage: str,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    params: dict,
) -> bool:
    mpath = _manifest_path(workdir, stage)
    if not mpath.exists():
        return False
    try:
        m = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if m.get("config_hash") != _params_hash(params):
        return False
    if set(m.get("inputs", {})) != set(inputs) or set(m.get("outputs", {})) != set(outputs):
        return False
    for name, p in inputs.items():
        if m["inputs"][name] != _sha256_path(p):
            return False
    for name, p in outputs.items():
        if not p.exists() or m["outputs"][name] != _sha256_path(p):
            return False
    return True


def _write_manifest(
    workdir: Path,
    stage: str,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    params: dict,
    counts: dict,
) -> None:
    manifest = {
        "stage": stage,
        "config_hash": _params_hash(params),
        "inputs": {name: _sha256_path(p) for name, p in inputs.items()},
        "outputs": {name: _sha256_path(p) for name, p in outputs.items()},
        "counts": counts,
    }
    _manifest_path(workdir, stage).write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# Artifact codecs
# ---------------------------------------------------------------------------

def _write_tables_json(path: Path, tables: list[ExtractedTable]) -> None:
    payload = [
        {
            "page_title": t.page_title,
            "section_path": list(t.section_path),
            "header": list(t.header),
            "rows": [list(r) for r in t.rows],
            "caption": t.caption,
            "table_id": t.table_id,
        }
        for t in tables
    ]
    _write_json(path, payload)


def _read_tables_json(path: Path) -> list[ExtractedTable]:
    payload = json.loads(path.read_text(encoding="utf-8"))
    return [
        ExtractedTable(
            page_title=rec["page_title"],
            section_path=tuple(rec["section_path"]),
            header=tuple(rec["header"]),
            rows=tuple(tuple(r) for r in rec["rows"]),
            caption=rec["caption"],
            table_id=rec["table_id"],
        )
        for rec in payload
    ]


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

def _answer_client(cfg: RunConfig):
    c = cfg.client
    if c.kind == "http":
        return HTTPCompletionClient(
            c.base_url,
            cache_path=cfg.cache_dir / "completions.jsonl",
            max_retries=c.max_retries,
            timeout=c.timeout,
        )
    if c.kind == "stub":
        ds_path = Path(c.dataset) if c.dataset else cfg.workdir / "dataset.jsonl"
        _require(ds_path, "split")
        ds = load_dataset(ds_path)
        return StubOracleClient(
            StubOracleConfig(
                knowledge_year=c.knowledge_year, dataset=ds, noise_rate=c.noise_rate
            )
        )
    raise ConfigError("template client cannot answer questions; use stub or http")


def _generator_client(cfg: RunConfig, tables: list[ExtractedTable], qcfg: QGPromptConfig):
    c = cfg.client
    if c.kind == "http":
        return HTTPCompletionClient(
            c.base_url,
            cache_path=cfg.cache_dir / "completions.jsonl",
            max_retries=c.max_retries,
            timeout=c.timeout,
        )
    canned = None
    if c.canned_responses:
        canned = json.loads(
            _require(Path(c.canned_responses), "write canned responses").read_text(
                encoding="utf-8"
            )
        )
    return TemplateQGClient(tables, qcfg, canned=canned)


def _qg_prompt_config(cfg: RunConfig) -> QGPromptConfig:
    try:
        return QGPromptConfig.load(
            sample_years=frozenset(cfg.qgen.sample_years),
            temperature=cfg.qgen.temperature,
            max_questions=cfg.qgen.max_questions,
            epoch=cfg.curation.epoch,
            horizon=cfg.curation.horizon,
        )
    except ValueError as exc:
        raise ConfigError(f"[qgen]: {exc}") from exc


def _eval_prompting(cfg: RunConfig, target_year: int) -> EvalPrompting:
    e = cfg.eval
    if e.prompting != "fewshot":
        return EvalPrompting(kind=e.prompting)
    sensitive = e.shots == "sensitive"
    strategy = PromptStrategy(
        example_kind="time_sensitive" if sensitive else "time_insensitive",
        mention_time=e.mention_time,
        target_year=target_year if (sensitive or e.mention_time) else None,
    )
    shots = SENSITIVE_DEMO_SHOTS if sensitive else INSENSITIVE_DEMO_SHOTS
    return EvalPrompting(kind="fewshot", strategy=strategy, shots=shots)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_extract_tables(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {"tables_dir": cfg.tables_dir}
    outputs = {"tables.json": wd / "tables.json"}
    params = {"stage": "extract-tables"}
    if _stage_fresh(wd, "extract-tables", inputs, outputs, params):
        print("extract-tables: up to date")
        return
    stats = IngestStats()
    tables = list(parse_tables(cfg.tables_dir, stats=stats))
    _write_tables_json(outputs["tables.json"], tables)
    counts = {"tables": len(tables), **stats.as_dict()}
    _write_manifest(wd, "extract-tables", inputs, outputs, params, counts)
    print(f"extract-tables: {len(tables)} tables")


def cmd_gen_questions(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {"tables.json": _require(wd / "tables.json", "extract-tables")}
    outputs = {"pairs.jsonl": wd / "pairs.jsonl", "qg_report.json": wd / "qg_report.json"}
    params = {
        "stage": "gen-questions",
        "qgen": dataclasses.asdict(cfg.qgen),
        "client": dataclasses.asdict(cfg.client),
    }
    if _stage_fresh(wd, "gen-questions", inputs, outputs, params):
        print("gen-questions: up to date")
        return
    tables = _read_tables_json(inputs["tables.json"])
    qcfg = _qg_prompt_config(cfg)
    client = _generator_client(cfg, tables, qcfg)
    report = QGReport()
    n = write_pairs_jsonl(
        outputs["pairs.jsonl"], generate_questions(client, tables, qcfg, report)
    )
    counts = {
        "pairs": n,
        "tables_seen": report.tables_seen,
        "tables_with_pairs": report.tables_with_pairs,
        "tables_skipped": report.tables_skipped,
        "tables_rejected": report.tables_rejected,
        "tables_failed": report.tables_failed,
    }
    _write_json(outputs["qg_report.json"], {**counts, "failures": report.failures})
    _write_manifest(wd, "gen-questions", inputs, outputs, params, counts)
    print(f"gen-questions: {n} pairs from {report.tables_with_pairs} tables")


def cmd_curate(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {
        "pairs.jsonl": _require(wd / "pairs.jsonl", "gen-questions"),
        "tables.json": _require(wd / "tables.json", "extract-tables"),
    }
    outputs = {
        "questions.jsonl": wd / "questions.jsonl",
        "attrition.csv": wd / "attrition.csv",
        "removals.jsonl": wd / "removals.jsonl",
    }
    params = {"stage": "curate", "curation": dataclasses.asdict(cfg.curation)}
    if _stage_fresh(wd, "curate", inputs, outputs, params):
        print("curate: up to date")
        return
    pairs = read_pairs_jsonl(inputs["pairs.jsonl"])
    tables = _read_tables_json(inputs["tables.json"])
    result = curate(pairs, tables, cfg.curation)
    ds = Dataset(
        tuple(result.questions),
        horizon=cfg.curation.horizon,
        epoch=cfg.curation.epoch,
    )
    save_dataset(ds, outputs["questions.jsonl"])
    write_attrition_csv(outputs["attrition.csv"], result.attrition)
    write_removal_log(outputs["removals.jsonl"], result.removal_log)
    counts = {
        "input_pairs": len(pairs),
        "kept": len(result.questions),
        "stages": {r.stage: {"kept": r.kept, "dropped": r.dropped} for r in result.attrition},
    }
    _write_manifest(wd, "curate", inputs, outputs, params, counts)
    print(f"curate: kept {len(result.questions)} of {len(pairs)}")


def cmd_split(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {"questions.jsonl": _require(wd / "questions.jsonl", "curate")}
    outputs = {"dataset.jsonl": wd / "dataset.jsonl"}
    params = {
        "stage": "split",
        "split": dataclasses.asdict(cfg.split),
        "epoch": cfg.curation.epoch,
        "horizon": cfg.curation.horizon,
    }
    if _stage_fresh(wd, "split", inputs, outputs, params):
        print("split: up to date")
        return
    base = load_dataset(
        inputs["questions.jsonl"], horizon=cfg.curation.horizon, epoch=cfg.curation.epoch
    )
    try:
        ds = split_dataset(
            base.questions,
            seed=cfg.split.seed,
            dev_size=cfg.split.dev_size,
            test_size=cfg.split.test_size,
            horizon=cfg.curation.horizon,
            epoch=cfg.curation.epoch,
        )
    except SplitSizeError as exc:
        raise ConfigError(str(exc)) from exc
    save_dataset(ds, outputs["dataset.jsonl"])
    counts = {
        name: sum(1 for s in ds.split_assignment.values() if s == name)
        for name in ("train", "dev", "test")
    }
    _write_manifest(wd, "split", inputs, outputs, params, counts)
    print(
        "split: train {train} dev {dev} test {test}".format(**counts)
    )


def _fixture_pv_transport(fixture_file: Path) -> Callable[[str], tuple[int, dict]]:
    months_by_title: dict[str, dict] = json.loads(
        fixture_file.read_text(encoding="utf-8")
    )

    def transport(url: str) -> tuple[int, dict]:
        encoded = url.split("/monthly/")[0].rsplit("/", 1)[1]
        title = unquote(encoded).replace("_", " ")
        months = months_by_title.get(title)
        if months is None:
            return 404, {}
        items = [
            {"timestamp": f"{ym}0100", "views": views}
            for ym, views in sorted(months.items())
        ]
        return 200, {"items": items}

    return transport


def cmd_fetch_popularity(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {"dataset.jsonl": _require(wd / "dataset.jsonl", "split")}
    params = {"stage": "fetch-popularity", "pageviews": dataclasses.asdict(cfg.pageviews)}
    if cfg.pageviews.fixture_file:
        inputs["pageviews_fixture"] = _require(
            Path(cfg.pageviews.fixture_file), "write the pageview fixture"
        )
    outputs = {
        "dataset_pop.jsonl": wd / "dataset_pop.jsonl",
        "pop_report.json": wd / "pop_report.json",
    }
    if _stage_fresh(wd, "fetch-popularity", inputs, outputs, params):
        print("fetch-popularity: up to date")
        return
    ds = load_dataset(
        inputs["dataset.jsonl"], horizon=cfg.curation.horizon, epoch=cfg.curation.epoch
    )
    transport = None
    if cfg.pageviews.fixture_file:
        transport = _fixture_pv_transport(Path(cfg.pageviews.fixture_file))
    client = PageviewClient(
        transport=transport, cache_path=cfg.cache_dir / "pageviews.jsonl"
    )
    annotated, report = annotate_popularity(
        ds, client, failure_cap=cfg.pageviews.failure_cap
    )
    save_dataset(annotated, outputs["dataset_pop.jsonl"])
    _write_json(outputs["pop_report.json"], dataclasses.asdict(report))
    counts = {
        "pages": report.n_pages,
        "failed_pages": report.n_failed_pages,
        "questions": report.n_questions,
        "null_popularity": report.n_null,
    }
    _write_manifest(wd, "fetch-popularity", inputs, outputs, params, counts)
    print(f"fetch-popularity: {report.n_pages - report.n_failed_pages} pages annotated")


def cmd_select_data(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    acfg = cfg.require_alignment()
    if acfg.strategy == "popularity":
        ds_path = _require(wd / "dataset_pop.jsonl", "fetch-popularity")
    else:
        ds_path = _require(wd / "dataset.jsonl", "split")
    inputs = {ds_path.name: ds_path}
    outputs = {"selected.json": wd / "selected.json"}
    params = {
        "stage": "select-data",
        "alignment": dataclasses.asdict(acfg),
        "client": dataclasses.asdict(cfg.client),
    }
    if _stage_fresh(wd, "select-data", inputs, outputs, params):
        print("select-data: up to date")
        return
    ds = load_dataset(ds_path, horizon=cfg.curation.horizon, epoch=cfg.curation.epoch)
    train = ds.split("train")
    scores = confidences = None
    if acfg.strategy == "correctness":
        client = _answer_client(cfg)
        scores, unscored = score_questions(client, train, acfg.target_year, acfg)
        if unscored:
            raise TransportError(
                f"{len(unscored)} of {len(train)} questions unscorable"
            )
    elif acfg.strategy == "confidence":
        client = _answer_client(cfg)
        confidences = {
            q.id: greedy_confidence(client, q, acfg.target_year) for q in train
        }
    try:
        ids = select_training(train, acfg, scores=scores, confidences=confidences)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_json(
        outputs["selected.json"],
        {
            "strategy": acfg.strategy,
            "target_year": acfg.target_year,
            "ids": ids,
            "scores": scores,
        },
    )
    counts = {"selected": len(ids), "train": len(train)}
    _write_manifest(wd, "select-data", inputs, outputs, params, counts)
    print(f"select-data: {len(ids)} of {len(train)} train questions")


def cmd_assign_adaptive(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    acfg = cfg.require_alignment()
    inputs = {"dataset.jsonl": _require(wd / "dataset.jsonl", "split")}
    outputs = {"assignments.json": wd / "assignments.json"}
    params = {
        "stage": "assign-adaptive",
        "alignment": dataclasses.asdict(acfg),
        "client": dataclasses.asdict(cfg.client),
    }
    if _stage_fresh(wd, "assign-adaptive", inputs, outputs, params):
        print("assign-adaptive: up to date")
        return
    ds = load_dataset(
        inputs["dataset.jsonl"], horizon=cfg.curation.horizon, epoch=cfg.curation.epoch
    )
    train = ds.split("train")
    client = _answer_client(cfg)
    assignments = assign_all(client, train, acfg)
    _write_json(
        outputs["assignments.json"],
        {"cutoff_year": acfg.cutoff_year, "assignments": assignments},
    )
    counts = {"assigned": len(assignments), "train": len(train)}
    _write_manifest(wd, "assign-adaptive", inputs, outputs, params, counts)
    print(f"assign-adaptive: {len(assignments)} of {len(train)} assigned")


def cmd_emit_train(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    acfg = cfg.require_alignment()
    if cfg.emit.mode == "target_year":
        source = _require(wd / "selected.json", "select-data")
    else:
        source = _require(wd / "assignments.json", "assign-adaptive")
    inputs = {
        source.name: source,
        "dataset.jsonl": _require(wd / "dataset.jsonl", "split"),
    }
    outputs = {"train.jsonl": wd / "train.jsonl", "hparams.toml": wd / "hparams.toml"}
    params = {
        "stage": "emit-train",
        "emit": dataclasses.asdict(cfg.emit),
        "target_year": acfg.target_year,
    }
    if _stage_fresh(wd, "emit-train", inputs, outputs, params):
        print("emit-train: up to date")
        return
    ds = load_dataset(
        inputs["dataset.jsonl"], horizon=cfg.curation.horizon, epoch=cfg.curation.epoch
    )
    payload = json.loads(source.read_text(encoding="utf-8"))
    if cfg.emit.mode == "target_year":
        examples = emit_target_year(payload["ids"], ds, acfg.target_year)
    else:
        assignments = {k: int(v) for k, v in payload["assignments"].items()}
        examples = emit_adaptive(assignments, ds)
    write_training_jsonl(outputs["train.jsonl"], examples)
    emit_hparams(outputs["hparams.toml"])
    counts = {"examples": len(examples)}
    _write_manifest(wd, "emit-train", inputs, outputs, params, counts)
    print(f"emit-train: {len(examples)} examples ({cfg.emit.mode})")


def _report_payload(report) -> dict:
    return {
        "per_year": {str(y): v for y, v in sorted(report.per_year.items())},
        "f_max_mean": report.f_max_mean,
        "f_decay_mean": {str(y): v for y, v in sorted(report.f_decay_mean.items())},
        "argmax_year": report.argmax_year,
        "category_counts": report.category_counts,
        "n_scored": report.n_scored,
        "n_failed": report.n_failed,
        "metadata": report.metadata,
    }


def cmd_eval(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    target_year = args.target_year if args.target_year is not None else cfg.eval.target_year
    inputs = {"dataset.jsonl": _require(wd / "dataset.jsonl", "split")}
    outputs = {
        "eval_records.jsonl": wd / "eval_records.jsonl",
        "eval_report.json": wd / "eval_report.json",
    }
    params = {
        "stage": "eval",
        "eval": dataclasses.asdict(cfg.eval),
        "target_year": target_year,
        "client": dataclasses.asdict(cfg.client),
    }
    if _stage_fresh(wd, "eval", inputs, outputs, params):
        print("eval: up to date")
        return
    ds = load_dataset(
        inputs["dataset.jsonl"], horizon=cfg.curation.horizon, epoch=cfg.curation.epoch
    )
    questions = ds.split(cfg.eval.split)
    if not questions:
        raise ConfigError(f"split {cfg.eval.split!r} has no questions")
    try:
        ecfg = EvalConfig(
            target_year=target_year,
            hit_threshold=cfg.eval.hit_threshold,
            epoch=cfg.curation.epoch,
            horizon=cfg.curation.horizon,
            max_tokens=cfg.eval.max_tokens,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    prompting = _eval_prompting(cfg, target_year)
    client = _answer_client(cfg)
    records = run_eval(client, questions, prompting, ecfg)
    if all(r.failed for r in records):
        raise TransportError("every completion request failed")
    report = build_report(records, ecfg)
    write_records_jsonl(outputs["eval_records.jsonl"], records)
    _write_json(outputs["eval_report.json"], _report_payload(report))
    counts = {
        "n_scored": report.n_scored,
        "n_failed": report.n_failed,
        **report.category_counts,
    }
    _write_manifest(wd, "eval", inputs, outputs, params, counts)
    print(
        f"eval: {report.n_scored} scored, argmax year {report.argmax_year}, "
        f"correct {report.category_counts['correct']}"
    )


def cmd_report(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {
        "eval_records.jsonl": _require(wd / "eval_records.jsonl", "eval"),
        "eval_report.json": _require(wd / "eval_report.json", "eval"),
    }
    outputs = {"plot_data.json": wd / "plot_data.json"}
    params = {"stage": "report"}
    if _stage_fresh(wd, "report", inputs, outputs, params):
        print("report: up to date")
        return
    prior = json.loads(inputs["eval_report.json"].read_text(encoding="utf-8"))
    ecfg = EvalConfig(
        target_year=prior["metadata"]["target_year"],
        hit_threshold=prior["metadata"]["hit_threshold"],
        epoch=cfg.curation.epoch,
        horizon=cfg.curation.horizon,
    )
    records = read_records_jsonl(inputs["eval_records.jsonl"])
    report = build_report(records, ecfg)
    write_plot_data(outputs["plot_data.json"], {"eval": report})
    counts = {"runs": 1, "records": len(records)}
    _write_manifest(wd, "report", inputs, outputs, params, counts)
    print("report: plot data for 1 run")


def cmd_sample_audit(cfg: RunConfig, args) -> None:
    wd = cfg.workdir
    inputs = {"pairs.jsonl": _require(wd / "pairs.jsonl", "gen-questions")}
    outputs = {"audit_sample.jsonl": wd / "audit_sample.jsonl"}
    params = {"stage": "sample-audit", "audit": dataclasses.asdict(cfg.audit)}
    if _stage_fresh(wd, "sample-audit", inputs, outputs, params):
        print("sample-audit: up to date")
        return
    pairs = read_pairs_jsonl(inputs["pairs.jsonl"])
    rng = random.Random(cfg.audit.seed)
    n = min(cfg.audit.n, len(pairs))
    sample = rng.sample(pairs, n) if pairs else []
    with outputs["audit_sample.jsonl"].open("w", encoding="utf-8") as fh:
        for rec in sample:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    counts = {"sampled": n, "pool": len(pairs)}
    _write_manifest(wd, "sample-audit", inputs, outputs, params, counts)
    print(f"sample-audit: {n} of {len(pairs)} pairs exported")


# ---------------------------------------------------------------------------
# Stub serving
# ---------------------------------------------------------------------------

def make_stub_server(cfg: RunConfig) -> ThreadingHTTPServer:
    """HTTP server exposing the stub oracle over the completions contract."""
    c = cfg.client
    ds_path = Path(c.dataset) if c.dataset else cfg.workdir / "dataset.jsonl"
    _require(ds_path, "split")
    ds = load_dataset(ds_path)
    stub = StubOracleClient(
        StubOracleConfig(
            knowledge_year=c.knowledge_year, dataset=ds, noise_rate=c.noise_rate
        )
    )

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
                req = CompletionRequest(
                    prompt=payload["prompt"],
                    max_tokens=payload.get("max_tokens") or 64,
                    temperature=payload.get("temperature") or 0.0,
                    n_samples=payload.get("n") or 1,
                    stop_sequences=tuple(payload.get("stop") or ()),
                    want_logprobs=bool(payload.get("logprobs")),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                self.send_response(400)
                self.end_headers()
                return
            result = stub.complete(req)
            choices = []
            for i, text in enumerate(result.texts):
                choice: dict = {"text": text}
                if result.mean_logprobs:
                    choice["logprobs"] = {"token_logprobs": [result.mean_logprobs[i]]}
                choices.append(choice)
            body = json.dumps({"choices": choices}, ensure_ascii=False).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *log_args):  # quiet by default
            log.debug("stub-serve: " + fmt, *log_args)

    try:
        return ThreadingHTTPServer((cfg.serve.host, cfg.serve.port), Handler)
    except OSError as exc:
        raise ConfigError(f"cannot bind {cfg.serve.host}:{cfg.serve.port}: {exc}") from exc


def cmd_stub_serve(cfg: RunConfig, args) -> None:
    server = make_stub_server(cfg)
    host, port = server.server_address[:2]
    print(f"stub-serve: listening on {host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "extract-tables": cmd_extract_tables,
    "gen-questions": cmd_gen_questions,
    "curate": cmd_curate,
    "split": cmd_split,
    "fetch-popularity": cmd_fetch_popularity,
    "select-data": cmd_select_data,
    "assign-adaptive": cmd_assign_adaptive,
    "emit-train": cmd_emit_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "sample-audit": cmd_sample_audit,
    "stub-serve": cmd_stub_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronoforge",
        description="Build, curate, and evaluate time-sensitive QA datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="run config (TOML)")
        if name == "eval":
            p.add_argument(
                "--target-year",
                type=int,
                default=None,
                help="override the configured evaluation target year",
            )
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
    except (TomlError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(cfg, args)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (TransportError, AnnotationAborted, CapabilityError) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ConfigError, TomlError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
