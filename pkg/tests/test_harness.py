import json

import pytest

from chronoforge.alignment import emit_adaptive
from chronoforge.client import (
    CompletionResult,
    StubOracleClient,
    StubOracleConfig,
    TransportError,
)
from chronoforge.harness import (
    EvalConfig,
    EvalPrompting,
    EvalRecord,
    build_report,
    categorize,
    cross_tab,
    earliest_correct_grouping,
    extract_answer,
    extract_answer_flagged,
    popularity_buckets,
    read_records_jsonl,
    run_eval,
    write_plot_data,
    write_records_jsonl,
)
from chronoforge.kb import Dataset, TemporalQuestion, TimedAnswer
from chronoforge.metrics import YearScoreVector
from chronoforge.prompting import INSENSITIVE_DEMO_SHOTS, PromptStrategy

CFG = EvalConfig(target_year=2022)

FEWSHOT = EvalPrompting(
    kind="fewshot",
    strategy=PromptStrategy("time_insensitive", mention_time=False),
    shots=INSENSITIVE_DEMO_SHOTS,
)


def _q(qid, text, answers, pop=None):
    return TemporalQuestion(id=qid, text=text, answers=tuple(answers),
                            page_title=f"Page {qid}", popularity=pop)


def _stub(questions, knowledge_year, noise_rate=0.0):
    ds = Dataset(questions=tuple(questions))
    return StubOracleClient(StubOracleConfig(
        knowledge_year=knowledge_year, dataset=ds, noise_rate=noise_rate))


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def test_extracts_after_marker():
    raw = ("Based on my latest knowledge for this question from year 2022, "
           "the answer is: Eintracht Frankfurt")
    assert extract_answer(raw, "after_marker") == "Eintracht Frankfurt"


def test_plain_takes_first_line():
    assert extract_answer("Paris\nSecond line", "plain") == "Paris"
    assert extract_answer("  padded  \nrest", "plain") == "padded"


def test_marker_extraction_uses_last_occurrence():
    raw = "the answer is: wrong one\nmore text the answer is: right one\ntail"
    assert extract_answer(raw, "after_marker") == "right one"


def test_marker_is_case_insensitive_and_truncates():
    raw = "The Answer Is: Brief reply\nGarbage continues here"
    assert extract_answer(raw, "after_marker") == "Brief reply"


def test_missing_marker_falls_back_flagged():
    pred, missing = extract_answer_flagged("Just an answer\nrest", "after_marker")
    assert pred == "Just an answer"
    assert missing is True
    pred, missing = extract_answer_flagged("Just an answer", "plain")
    assert missing is False


def test_unknown_extraction_mode():
    with pytest.raises(ValueError):
        extract_answer("x", "clever")


def test_adaptive_emission_round_trips_through_extraction():
    q = _q("rt0", "Which team won the UEFA Europa League?", [
        TimedAnswer("Villarreal", 2021, 2021),
        TimedAnswer("Eintracht Frankfurt", 2022, 2022),
    ])
    ds = Dataset(questions=(q,))
    for year, answer in ((2021, "Villarreal"), (2022, "Eintracht Frankfurt")):
        (ex,) = emit_adaptive({"rt0": year}, ds)
        assert extract_answer(ex.completion, "after_marker") == answer
        assert f"from year {year}," in ex.completion


# ---------------------------------------------------------------------------
# Categorization
# ---------------------------------------------------------------------------

TIMELINE = _q("c0", "Who keeps the lighthouse?", [
    TimedAnswer("gamma stone", 2010, 2014),
    TimedAnswer("delta bloom", 2015, 2019),
    TimedAnswer("epsilon tide", 2020, None),
])


def test_categorize_target_answer_is_correct():
    cat, hits = categorize("epsilon tide", TIMELINE, 2022, CFG)
    assert cat == "correct"
    assert hits == frozenset(range(2020, 2024))


def test_categorize_old_answer_is_misaligned():
    cat, hits = categorize("delta bloom", TIMELINE, 2022, CFG)
    assert cat == "misaligned"
    assert hits == frozenset(range(2015, 2020))


def test_categorize_junk_is_incorrect():
    cat, hits = categorize("UNKNOWN-ENTITY", TIMELINE, 2022, CFG)
    assert cat == "incorrect"
    assert hits == frozenset()


def test_categorize_threshold_boundary():
    q = _q("c1", "Which five words?", [
        TimedAnswer("alpha bravo charlie delta echo", 2020, None)])
    # four of five tokens -> F1 just above 0.8, three of five -> 0.6
    cat, _ = categorize("alpha bravo charlie delta foxtrot", q, 2022, CFG)
    assert cat == "correct"
    cat, _ = categorize("alpha bravo charlie golf foxtrot", q, 2022, CFG)
    assert cat == "incorrect"


def test_misaligned_implies_high_fmax():
    from chronoforge.metrics import f1_at_year
    cat, hits = categorize("delta bloom", TIMELINE, 2022, CFG)
    assert cat == "misaligned"
    best = max(f1_at_year("delta bloom", TIMELINE, y, CFG.horizon)
               for y in range(CFG.epoch, CFG.horizon + 1))
    assert best >= CFG.hit_threshold


# ---------------------------------------------------------------------------
# Prompting descriptors
# ---------------------------------------------------------------------------

def test_prompting_render_variants():
    assert FEWSHOT.render("Who?").endswith("Who?\nThe answer is:")
    assert FEWSHOT.render("Who?").count("Answer the following question: ") == 6
    qa = EvalPrompting(kind="finetuned_qa")
    assert qa.render("Who?") == "Answer the following question: Who?\nThe answer is:"
    assert qa.extraction_mode == "plain"
    ad = EvalPrompting(kind="adaptive")
    assert ad.render("Who?") == "Answer the following question: Who?\n"
    assert ad.extraction_mode == "after_marker"


def test_prompting_validation():
    with pytest.raises(ValueError):
        EvalPrompting(kind="fewshot")
    with pytest.raises(ValueError):
        EvalPrompting(kind="adaptive", shots=INSENSITIVE_DEMO_SHOTS)
    with pytest.raises(ValueError):
        EvalPrompting(kind="telepathy")


# ---------------------------------------------------------------------------
# Running evaluations
# ---------------------------------------------------------------------------

def _yearly_questions(n):
    """Questions whose answer is a distinct single token every year."""
    out = []
    for i in range(n):
        answers = tuple(
            TimedAnswer(f"holder{y}x{i}", y, y) for y in range(2000, 2024)
        )
        out.append(_q(f"y{i:02d}", f"Who holds post number {i}?", answers))
    return out


def test_run_eval_stub_hits_cover_validity_span():
    q = TIMELINE
    records = run_eval(_stub([q], 2019), [q], FEWSHOT, CFG)
    (r,) = records
    assert r.prediction == "delta bloom"
    assert r.hit_years >= frozenset(range(2015, 2020))
    assert r.category == "misaligned"
    assert not r.failed


def test_run_eval_empty_split():
    with pytest.raises(ValueError):
        run_eval(_stub([TIMELINE], 2019), [], FEWSHOT, CFG)


def test_run_eval_knowledge_peak_at_stub_year():
    qs = _yearly_questions(3)
    records = run_eval(_stub(qs, 2015), qs, FEWSHOT, CFG)
    report = build_report(records, CFG)
    assert report.argmax_year == 2015
    assert report.per_year[2015] == 1.0
    assert report.per_year[2016] == 0.0
    assert report.category_counts["misaligned"] == 3


def test_run_eval_counts_transport_failures():
    qs = _yearly_questions(3)
    stub = _stub(qs, 2015)

    class Flaky:
        def complete(self, req):
            if qs[1].text in req.prompt:
                raise TransportError("socket closed")
            return stub.complete(req)

    records = run_eval(Flaky(), qs, FEWSHOT, CFG)
    assert [r.failed for r in records] == [False, True, False]
    report = build_report(records, CFG)
    assert report.n_failed == 1
    assert report.n_scored == 2


def test_run_eval_is_deterministic():
    qs = _yearly_questions(2)
    a = run_eval(_stub(qs, 2019), qs, FEWSHOT, CFG)
    b = run_eval(_stub(qs, 2019), qs, FEWSHOT, CFG)
    assert a == b


def test_run_eval_adaptive_fallback_flags_markerless_output():
    q = TIMELINE
    records = run_eval(_stub([q], 2019), [q], EvalPrompting(kind="adaptive"), CFG)
    (r,) = records
    assert r.marker_missing is True
    assert r.prediction == "delta bloom"  # fallback still reads the answer


def test_build_report_metadata_and_counts():
    qs = _yearly_questions(2)
    records = run_eval(_stub(qs, 2022), qs, FEWSHOT, CFG)
    report = build_report(records, CFG)
    assert report.metadata["decoding"] == "greedy"
    assert report.metadata["hit_threshold"] == 0.8
    assert sum(report.category_counts.values()) == report.n_scored == 2
    assert report.category_counts["correct"] == 2


# ---------------------------------------------------------------------------
# Analyses
# ---------------------------------------------------------------------------

def _rec(qid, category, failed=False, scores=None):
    ys = None
    if scores is not None:
        ys = YearScoreVector(scores=scores, f_max=max(scores.values()))
    return EvalRecord(id=qid, raw_output="", prediction="x", year_scores=ys,
                      category=category, hit_years=frozenset(), failed=failed)


def test_cross_tab_sums_match_category_totals():
    a = [_rec("i0", "correct"), _rec("i1", "correct"),
         _rec("i2", "misaligned"), _rec("i3", "incorrect"),
         _rec("i4", "incorrect")]
    b = [_rec("i0", "correct"), _rec("i1", "misaligned"),
         _rec("i2", "misaligned"), _rec("i3", "correct"),
         _rec("i4", "incorrect")]
    table = cross_tab(a, b)
    row_sums = {cat: sum(row.values()) for cat, row in table.items()}
    assert row_sums == {"correct": 2, "misaligned": 1, "incorrect": 2}
    col_sums = {}
    for row in table.values():
        for cat, v in row.items():
            col_sums[cat] = col_sums.get(cat, 0) + v
    assert col_sums == {"correct": 2, "misaligned": 2, "incorrect": 1}
    assert table["correct"]["correct"] == 1


def test_cross_tab_skips_failed_and_unmatched():
    a = [_rec("i0", "correct"), _rec("i1", "correct", failed=True),
         _rec("i9", "correct")]
    b = [_rec("i0", "incorrect"), _rec("i1", "correct")]
    table = cross_tab(a, b)
    assert sum(sum(row.values()) for row in table.values()) == 1
    assert table["correct"]["incorrect"] == 1


def _changed_question(qid, change_year):
    return _q(qid, f"Who runs office {qid}?", [
        TimedAnswer(f"veteran {qid}", 2010, change_year - 1),
        TimedAnswer(f"newcomer {qid}", change_year, None),
    ])


def test_earliest_correct_grouping_buckets_by_answer_birth():
    qs = [_changed_question("e0", 2020), _changed_question("e1", 2021),
          _changed_question("e2", 2022), _changed_question("e3", 2021)]
    ds = Dataset(questions=tuple(qs))
    records = [_rec("e0", "correct"), _rec("e1", "correct"),
               _rec("e2", "correct"), _rec("e3", "misaligned")]
    hist = earliest_correct_grouping(records, ds, CFG)
    assert hist == {2020: 1, 2021: 1, 2022: 1}
    assert sum(hist.values()) == 3  # e3 is not correct, so not counted


def test_earliest_correct_grouping_excludes_unchanged_questions():
    steady = _q("s0", "What never moves?", [TimedAnswer("same rock", 2018, None)])
    ds = Dataset(questions=(steady,))
    hist = earliest_correct_grouping([_rec("s0", "correct")], ds, CFG)
    assert sum(hist.values()) == 0


def test_earliest_correct_grouping_uses_current_validity_run():
    # the 2022 answer also held 2010-2018, then returned
    comeback = _q("cb0", "Which film leads the chart?", [
        TimedAnswer("blue planet saga", 2010, 2018),
        TimedAnswer("final stand", 2019, 2021),
        TimedAnswer("blue planet saga", 2022, None),
    ])
    ds = Dataset(questions=(comeback,))
    hist = earliest_correct_grouping([_rec("cb0", "correct")], ds, CFG)
    assert hist == {2020: 0, 2021: 0, 2022: 1}


def test_popularity_buckets_equal_counts_and_means():
    qs = [_q(f"p{i}", f"Question {i}?", [TimedAnswer("x", 2020, None)],
             pop=10.0 ** (i + 1)) for i in range(6)]
    ds = Dataset(questions=tuple(qs))
    records = [_rec(f"p{i}", "correct", scores={2022: i / 10.0})
               for i in range(6)]
    buckets, excluded = popularity_buckets(records, ds, 2, target_year=2022)
    assert excluded == 0
    assert [b["n"] for b in buckets] == [3, 3]
    assert buckets[0]["mean_f1"] == pytest.approx((0.0 + 0.1 + 0.2) / 3)
    assert buckets[1]["mean_f1"] == pytest.approx((0.3 + 0.4 + 0.5) / 3)
    assert buckets[0]["log_pop_hi"] <= buckets[1]["log_pop_lo"]


def test_popularity_buckets_single_bucket_is_global_mean():
    qs = [_q(f"p{i}", f"Question {i}?", [TimedAnswer("x", 2020, None)],
             pop=float(i + 1)) for i in range(4)]
    ds = Dataset(questions=tuple(qs))
    records = [_rec(f"p{i}", "correct", scores={2022: 1.0 if i < 2 else 0.0})
               for i in range(4)]
    buckets, _ = popularity_buckets(records, ds, 1, target_year=2022)
    assert len(buckets) == 1
    assert buckets[0]["mean_f1"] == 0.5


def test_popularity_buckets_excludes_missing_popularity():
    qs = [_q("p0", "Q0?", [TimedAnswer("x", 2020, None)], pop=100.0),
          _q("p1", "Q1?", [TimedAnswer("x", 2020, None)])]
    ds = Dataset(questions=tuple(qs))
    records = [_rec("p0", "correct", scores={2022: 1.0}),
               _rec("p1", "correct", scores={2022: 0.0})]
    buckets, excluded = popularity_buckets(records, ds, 1, target_year=2022)
    assert excluded == 1
    assert buckets[0]["n"] == 1
    with pytest.raises(ValueError):
        popularity_buckets(records, ds, 0, target_year=2022)


def test_stub_is_popularity_blind():
    qs = [_q(f"b{i:02d}", f"Who holds seat {i}?",
             [TimedAnswer(f"keeper{i}", 2015, None)],
             pop=10.0 ** (i % 5 + 1)) for i in range(10)]
    ds = Dataset(questions=tuple(qs))
    records = run_eval(_stub(qs, 2022), qs, FEWSHOT, CFG)
    buckets, _ = popularity_buckets(records, ds, 5, target_year=2022)
    assert all(b["mean_f1"] == 1.0 for b in buckets)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_records_jsonl_round_trip(tmp_path):
    qs = _yearly_questions(2)
    stub = _stub(qs, 2015)

    class Flaky:
        def complete(self, req):
            if qs[1].text in req.prompt:
                raise TransportError("down")
            return stub.complete(req)

    records = run_eval(Flaky(), qs, FEWSHOT, CFG)
    path = tmp_path / "records.jsonl"
    write_records_jsonl(path, records)
    assert read_records_jsonl(path) == records


def test_plot_data_shape(tmp_path):
    qs = _yearly_questions(2)
    records = run_eval(_stub(qs, 2015), qs, FEWSHOT, CFG)
    report = build_report(records, CFG)
    path = tmp_path / "plot.json"
    write_plot_data(path, {"stub2015": report})
    payload = json.loads(path.read_text(encoding="utf-8"))
    run = payload["runs"]["stub2015"]
    assert run["per_year"]["2015"] == 1.0
    assert run["argmax_year"] == 2015
    assert set(run["category_counts"]) == {"correct", "misaligned", "incorrect"}


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(target_year=2022, hit_threshold=0.0)
    with pytest.raises(ValueError):
        EvalConfig(target_year=1900)
