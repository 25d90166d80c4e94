"""End-to-end tests for the pipeline CLI over a synthetic corpus."""
from __future__ import annotations

import json
import threading

import pytest
import requests

from chronoforge.cli import (
    EXIT_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    EXIT_TRANSPORT,
    main,
    make_stub_server,
)
from chronoforge.client import QUESTION_LEAD_IN, CompletionRequest, HTTPCompletionClient
from chronoforge.config import RunConfig, load_toml
from chronoforge.kb import answers_at, load_dataset
from chronoforge.synth import synthetic_qg_responses, synthetic_tables, write_corpus

PIPELINE = (
    "extract-tables",
    "gen-questions",
    "curate",
    "split",
    "fetch-popularity",
    "select-data",
    "assign-adaptive",
    "emit-train",
    "eval",
    "report",
    "sample-audit",
)

ARTIFACTS = (
    "tables.json",
    "pairs.jsonl",
    "qg_report.json",
    "questions.jsonl",
    "attrition.csv",
    "removals.jsonl",
    "dataset.jsonl",
    "dataset_pop.jsonl",
    "pop_report.json",
    "selected.json",
    "assignments.json",
    "train.jsonl",
    "hparams.toml",
    "eval_records.jsonl",
    "eval_report.json",
    "plot_data.json",
    "audit_sample.jsonl",
)

STUB_CLIENT = """\
kind = "stub"
knowledge_year = 2022
canned_responses = "canned.json"
"""


def _write_config(
    path,
    workdir,
    *,
    dev=4,
    test=6,
    client=STUB_CLIENT,
    fixture="pageviews.json",
    extra="",
):
    path.write_text(
        "[paths]\n"
        'tables_dir = "corpus"\n'
        f'workdir = "{workdir}"\n'
        "\n[client]\n"
        f"{client}"
        "\n[split]\n"
        "seed = 0\n"
        f"dev_size = {dev}\n"
        f"test_size = {test}\n"
        "\n[alignment]\n"
        "target_year = 2022\n"
        'strategy = "correctness"\n'
        "select_k = 2\n"
        "n_samples = 2\n"
        "\n[eval]\n"
        "target_year = 2022\n"
        'shots = "sensitive"\n'
        "mention_time = true\n"
        "\n[pageviews]\n"
        f'fixture_file = "{fixture}"\n'
        "\n[audit]\n"
        "n = 5\n"
        "seed = 1\n" + extra,
        encoding="utf-8",
    )


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    tables = synthetic_tables()
    write_corpus(tables, root / "corpus")
    (root / "canned.json").write_text(
        json.dumps(synthetic_qg_responses(tables)), encoding="utf-8"
    )
    months = {
        t.page_title: {"201601": 100 * (i + 1), "201602": 50}
        for i, t in enumerate(tables)
    }
    (root / "pageviews.json").write_text(json.dumps(months), encoding="utf-8")
    _write_config(root / "run.toml", "work")
    return root


@pytest.fixture(scope="module")
def ran(env):
    """Run every stage once; tests inspect the workdir."""
    for stage in PIPELINE:
        assert main([stage, "--config", str(env / "run.toml")]) == EXIT_OK, stage
    return env / "work"


@pytest.fixture(scope="module")
def stub_server(env, ran):
    cfg_path = env / "serve.toml"
    _write_config(cfg_path, "work", extra='\n[serve]\nhost = "127.0.0.1"\nport = 0\n')
    server = make_stub_server(RunConfig.load(cfg_path))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server.server_address[0], server.server_address[1]
    server.shutdown()
    server.server_close()
    thread.join(timeout=5)


class TestPipeline:
    def test_all_artifacts_written(self, ran):
        for name in ARTIFACTS:
            assert (ran / name).exists(), name

    def test_manifests_written(self, ran):
        for stage in PIPELINE:
            payload = json.loads((ran / f"{stage}.manifest.json").read_text())
            assert payload["stage"] == stage
            assert set(payload) >= {"config_hash", "inputs", "outputs", "counts"}

    def test_generation_counts(self, ran):
        report = json.loads((ran / "qg_report.json").read_text())
        assert report["pairs"] == 12
        assert report["tables_with_pairs"] == 12
        assert report["tables_failed"] == 0
        pairs = (ran / "pairs.jsonl").read_text().splitlines()
        assert len(pairs) == 12

    def test_curation_keeps_every_table(self, ran):
        questions = (ran / "questions.jsonl").read_text().splitlines()
        assert len(questions) == 12
        header = (ran / "attrition.csv").read_text().splitlines()[0]
        assert header == "stage,input_count,kept,dropped,reason_histogram_json"

    def test_split_sizes_and_page_disjointness(self, ran):
        ds = load_dataset(ran / "dataset.jsonl")
        by_split = {
            name: {q.page_title for q in ds.split(name)}
            for name in ("train", "dev", "test")
        }
        assert len(ds.split("train")) == 2
        assert len(ds.split("dev")) == 4
        assert len(ds.split("test")) == 6
        assert not by_split["train"] & by_split["dev"]
        assert not by_split["train"] & by_split["test"]
        assert not by_split["dev"] & by_split["test"]

    def test_popularity_annotation(self, ran):
        ds = load_dataset(ran / "dataset_pop.jsonl")
        expected = {
            t.page_title: (100 * (i + 1) + 50) / 2
            for i, t in enumerate(synthetic_tables())
        }
        for q in ds.questions:
            assert q.popularity == expected[q.page_title]
        report = json.loads((ran / "pop_report.json").read_text())
        assert report["n_pages"] == 12
        assert report["n_failed_pages"] == 0
        assert report["n_null"] == 0
        assert report["window"] == "2016-01..2023-12"

    def test_selection_takes_perfect_scores(self, ran):
        ds = load_dataset(ran / "dataset.jsonl")
        payload = json.loads((ran / "selected.json").read_text())
        assert payload["strategy"] == "correctness"
        assert payload["target_year"] == 2022
        assert sorted(payload["ids"]) == sorted(q.id for q in ds.split("train"))
        assert all(v == 1.0 for v in payload["scores"].values())

    def test_adaptive_assignment_hits_cutoff(self, ran):
        ds = load_dataset(ran / "dataset.jsonl")
        payload = json.loads((ran / "assignments.json").read_text())
        assert payload["cutoff_year"] == 2022
        train_ids = {q.id for q in ds.split("train")}
        assert set(payload["assignments"]) == train_ids
        assert all(y == 2022 for y in payload["assignments"].values())

    def test_training_file_and_hparams(self, ran):
        ds = load_dataset(ran / "dataset.jsonl")
        lines = (ran / "train.jsonl").read_text().splitlines()
        assert len(lines) == 2
        for line in lines:
            rec = json.loads(line)
            q = ds.by_id(rec["id"])
            assert rec["loss_mask"] == "answer_only"
            assert rec["prompt"].startswith(QUESTION_LEAD_IN)
            assert rec["prompt"].endswith("The answer is:")
            assert rec["completion"] == min(answers_at(q, 2022, ds.horizon))
        hparams = load_toml(ran / "hparams.toml")
        assert hparams["learning_rate"] == 5e-06
        assert hparams["epochs"] == 2
        assert hparams["precision"] == "bfloat16"

    def test_eval_report(self, ran):
        report = json.loads((ran / "eval_report.json").read_text())
        assert report["n_scored"] == 6
        assert report["n_failed"] == 0
        assert report["category_counts"]["correct"] == 6
        assert report["per_year"]["2022"] == 1.0
        assert report["metadata"]["target_year"] == 2022

    def test_plot_data(self, ran):
        payload = json.loads((ran / "plot_data.json").read_text())
        assert set(payload["runs"]) == {"eval"}
        assert payload["runs"]["eval"]["per_year"]["2022"] == 1.0

    def test_audit_sample_is_subset_of_pairs(self, ran):
        pool = set((ran / "pairs.jsonl").read_text().splitlines())
        sample = (ran / "audit_sample.jsonl").read_text().splitlines()
        assert len(sample) == 5
        assert set(sample) <= pool

    def test_rerun_short_circuits(self, env, ran, capsys):
        for stage in PIPELINE:
            assert main([stage, "--config", str(env / "run.toml")]) == EXIT_OK
            assert f"{stage}: up to date" in capsys.readouterr().out

    def test_double_run_is_bitwise_identical(self, env, ran):
        _write_config(env / "run2.toml", "work2")
        for stage in PIPELINE:
            assert main([stage, "--config", str(env / "run2.toml")]) == EXIT_OK
        names = list(ARTIFACTS) + [f"{s}.manifest.json" for s in PIPELINE]
        for name in names:
            first = (env / "work" / name).read_bytes()
            second = (env / "work2" / name).read_bytes()
            assert first == second, name


class TestStubServer:
    def test_serves_completion_contract(self, ran, stub_server):
        host, port = stub_server
        ds = load_dataset(ran / "dataset.jsonl")
        q = ds.split("test")[0]
        expected = min(answers_at(q, 2022, ds.horizon))
        client = HTTPCompletionClient(f"http://{host}:{port}")
        result = client.complete(CompletionRequest(
            prompt=f"{QUESTION_LEAD_IN}{q.text}\nThe answer is:",
            n_samples=3,
            want_logprobs=True,
        ))
        assert result.texts == (expected,) * 3
        assert len(result.mean_logprobs) == 3
        assert all(lp is not None and lp <= 0 for lp in result.mean_logprobs)

    def test_unknown_question_gets_sentinel(self, stub_server):
        host, port = stub_server
        client = HTTPCompletionClient(f"http://{host}:{port}")
        result = client.complete(CompletionRequest(
            prompt=f"{QUESTION_LEAD_IN}Who is this?\nThe answer is:",
        ))
        assert result.texts == ("UNKNOWN-ENTITY",)

    def test_malformed_payload_is_rejected(self, stub_server):
        host, port = stub_server
        resp = requests.post(
            f"http://{host}:{port}", json={"max_tokens": 4}, timeout=10
        )
        assert resp.status_code == 400

    def test_eval_over_http_matches_direct_stub(self, env, ran, stub_server):
        host, port = stub_server
        _write_config(env / "run5a.toml", "work5")
        for stage in ("extract-tables", "gen-questions", "curate", "split"):
            assert main([stage, "--config", str(env / "run5a.toml")]) == EXIT_OK
        _write_config(
            env / "run5b.toml",
            "work5",
            client=f'kind = "http"\nbase_url = "http://{host}:{port}"\n',
        )
        assert main(["eval", "--config", str(env / "run5b.toml")]) == EXIT_OK
        for name in ("eval_records.jsonl", "eval_report.json"):
            assert (env / "work5" / name).read_bytes() == (
                env / "work" / name
            ).read_bytes(), name


def _mini_env(tmp_path, n_tables=4):
    tables = synthetic_tables(n=n_tables)
    write_corpus(tables, tmp_path / "corpus")
    (tmp_path / "canned.json").write_text(
        json.dumps(synthetic_qg_responses(tables)), encoding="utf-8"
    )
    (tmp_path / "pageviews.json").write_text("{}", encoding="utf-8")
    cfg = tmp_path / "run.toml"
    _write_config(cfg, "work", dev=1, test=2)
    return cfg


class TestFreshness:
    def test_input_change_invalidates_manifest(self, tmp_path, capsys):
        cfg = _mini_env(tmp_path)
        assert main(["extract-tables", "--config", str(cfg)]) == EXIT_OK
        assert "4 tables" in capsys.readouterr().out
        assert main(["extract-tables", "--config", str(cfg)]) == EXIT_OK
        assert "up to date" in capsys.readouterr().out

        extra = tmp_path / "corpus" / "zzz_extra"
        extra.mkdir()
        (extra / "table_0.csv").write_text(
            "Year,Chair\n2001,Extra Person\n2005,Other Name\n", encoding="utf-8"
        )
        (extra / "meta.json").write_text(
            json.dumps({"page_title": "Zzz Extra", "sections": {"table_0": []}}),
            encoding="utf-8",
        )
        assert main(["extract-tables", "--config", str(cfg)]) == EXIT_OK
        assert "5 tables" in capsys.readouterr().out

    def test_target_year_override_reruns_eval(self, tmp_path, capsys):
        cfg = _mini_env(tmp_path)
        for stage in ("extract-tables", "gen-questions", "curate", "split", "eval"):
            assert main([stage, "--config", str(cfg)]) == EXIT_OK
        capsys.readouterr()

        assert main(["eval", "--config", str(cfg)]) == EXIT_OK
        assert "up to date" in capsys.readouterr().out

        assert main(
            ["eval", "--config", str(cfg), "--target-year", "2005"]
        ) == EXIT_OK
        assert "up to date" not in capsys.readouterr().out
        report = json.loads((tmp_path / "work" / "eval_report.json").read_text())
        assert report["metadata"]["target_year"] == 2005

        assert main(
            ["eval", "--config", str(cfg), "--target-year", "2022"]
        ) == EXIT_OK
        report = json.loads((tmp_path / "work" / "eval_report.json").read_text())
        assert report["metadata"]["target_year"] == 2022


class TestExitCodes:
    def test_missing_inputs_name_the_producer(self, tmp_path, capsys):
        cfg = _mini_env(tmp_path)
        assert main(["gen-questions", "--config", str(cfg)]) == EXIT_MISSING_INPUT
        assert "extract-tables" in capsys.readouterr().err
        assert main(["curate", "--config", str(cfg)]) == EXIT_MISSING_INPUT
        assert "gen-questions" in capsys.readouterr().err
        assert main(["eval", "--config", str(cfg)]) == EXIT_MISSING_INPUT
        assert "split" in capsys.readouterr().err

    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("just junk ]\n", encoding="utf-8")
        assert main(["split", "--config", str(bad)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_nonexistent_config(self, tmp_path):
        assert main(["split", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG

    def test_select_data_needs_alignment_section(self, tmp_path, capsys):
        (tmp_path / "corpus").mkdir()
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            '[paths]\ntables_dir = "corpus"\nworkdir = "work"\n', encoding="utf-8"
        )
        assert main(["select-data", "--config", str(cfg)]) == EXIT_CONFIG
        assert "alignment" in capsys.readouterr().err

    def test_eval_target_year_out_of_range(self, tmp_path, capsys):
        cfg = _mini_env(tmp_path)
        for stage in ("extract-tables", "gen-questions", "curate", "split"):
            assert main([stage, "--config", str(cfg)]) == EXIT_OK
        assert main(
            ["eval", "--config", str(cfg), "--target-year", "1900"]
        ) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_refused_endpoint_exits_transport(self, env, ran, capsys):
        cfg = env / "run_refused.toml"
        _write_config(
            cfg,
            "work",
            client='kind = "http"\nbase_url = "http://127.0.0.1:9"\ntimeout = 2.0\n',
        )
        assert main(["eval", "--config", str(cfg)]) == EXIT_TRANSPORT
        assert "transport failure" in capsys.readouterr().err

    def test_popularity_failure_cap_aborts(self, env, capsys):
        sparse = env / "pageviews_sparse.json"
        sparse.write_text("{}", encoding="utf-8")
        cfg = env / "run_pv.toml"
        _write_config(cfg, "work_pv", fixture="pageviews_sparse.json")
        for stage in ("extract-tables", "gen-questions", "curate", "split"):
            assert main([stage, "--config", str(cfg)]) == EXIT_OK
        assert main(["fetch-popularity", "--config", str(cfg)]) == EXIT_TRANSPORT
        assert "transport failure" in capsys.readouterr().err
        assert not (env / "work_pv" / "dataset_pop.jsonl").exists()


class TestParser:
    def test_every_stage_is_a_subcommand(self):
        from chronoforge.cli import build_parser

        parser = build_parser()
        for stage in PIPELINE + ("stub-serve",):
            args = parser.parse_args([stage, "--config", "run.toml"])
            assert args.config == "run.toml"

    def test_eval_takes_target_year(self):
        from chronoforge.cli import build_parser

        args = build_parser().parse_args(
            ["eval", "--config", "run.toml", "--target-year", "2010"]
        )
        assert args.target_year == 2010
