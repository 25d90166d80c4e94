import json

import pytest

from chronoforge.kb import Dataset, TemporalQuestion, TimedAnswer
from chronoforge.pageviews import (
    DEFAULT_PV_BASE,
    AnnotationAborted,
    NoPageviewData,
    PageNotFound,
    PageviewClient,
    PageviewError,
    annotate_popularity,
    window_label,
)


def _items(month_views):
    return {
        "items": [
            {"timestamp": f"{mk.replace('-', '')}0100", "views": v}
            for mk, v in month_views.items()
        ]
    }


class FakeTransport:
    def __init__(self, responses):
        self.responses = responses  # substring -> (status, body)
        self.calls = []

    def __call__(self, url):
        self.calls.append(url)
        for needle, resp in self.responses.items():
            if needle in url:
                return resp
        return 404, {"type": "not_found"}


def _client(responses, tmp_path=None, **kw):
    transport = FakeTransport(responses)
    cache = tmp_path / "pv.jsonl" if tmp_path else None
    client = PageviewClient(
        base_url="http://pv.test/metrics", cache_path=cache,
        transport=transport, sleep=lambda s: None, min_interval=0.0, **kw,
    )
    return client, transport


def test_mean_over_reported_months():
    client, _ = _client({"Some_Page": (200, _items({"2016-01": 100, "2016-02": 300}))})
    assert client.fetch_avg_monthly("Some Page") == 200.0


def test_missing_months_are_excluded_not_zeroed():
    months = {"2021-01": 10, "2022-06": 20, "2023-12": 60}
    client, _ = _client({"Late_Page": (200, _items(months))})
    assert client.fetch_avg_monthly("Late Page") == 30.0


def test_not_found_and_no_data_errors():
    client, _ = _client({"Empty_Page": (200, {"items": []})})
    with pytest.raises(PageNotFound):
        client.fetch_avg_monthly("Ghost Page")
    with pytest.raises(NoPageviewData):
        client.fetch_avg_monthly("Empty Page")
    with pytest.raises(ValueError):
        client.fetch_avg_monthly("   ")


def test_out_of_window_months_are_ignored():
    body = _items({"2015-12": 9999, "2016-01": 50, "2024-01": 9999})
    client, _ = _client({"Edge_Page": (200, body)})
    assert client.fetch_avg_monthly("Edge Page") == 50.0


def test_cache_avoids_second_fetch(tmp_path):
    responses = {"Hot_Page": (200, _items({"2019-03": 120, "2019-04": 80}))}
    client, transport = _client(responses, tmp_path)
    first = client.fetch_avg_monthly("Hot Page")
    second = client.fetch_avg_monthly("Hot Page")
    assert first == second == 100.0
    assert len(transport.calls) == 1


def test_cache_round_trips_exactly(tmp_path):
    months = {"2016-01": 7, "2016-02": 11, "2016-03": 13}
    responses = {"Stored_Page": (200, _items(months))}
    client, _ = _client(responses, tmp_path)
    warm_value = client.fetch_avg_monthly("Stored Page")

    cold, cold_transport = _client({}, tmp_path)
    assert cold.fetch_avg_monthly("Stored Page") == warm_value
    assert cold_transport.calls == []


def test_url_shape_and_encoding():
    client, transport = _client(
        {"Zlatan_Ibrahimovi": (200, _items({"2016-01": 1}))})
    client.fetch_months("Zlatan Ibrahimović")
    (url,) = transport.calls
    assert url.startswith("http://pv.test/metrics/Zlatan_Ibrahimovi")
    assert "%C4%87" in url  # ć percent-encoded
    assert url.endswith("/monthly/20160101/20231201")
    assert " " not in url


def test_env_var_overrides_base(monkeypatch):
    monkeypatch.setenv("CHRONOFORGE_PV_BASE", "http://fixture.test/pv")
    transport = FakeTransport({"Page": (200, _items({"2016-01": 1}))})
    client = PageviewClient(transport=transport, sleep=lambda s: None,
                            min_interval=0.0)
    client.fetch_months("Page")
    assert transport.calls[0].startswith("http://fixture.test/pv/Page")
    monkeypatch.delenv("CHRONOFORGE_PV_BASE")
    assert PageviewClient(transport=transport).base_url == DEFAULT_PV_BASE


def test_retries_then_raises():
    class Flaky:
        def __init__(self):
            self.calls = 0

        def __call__(self, url):
            self.calls += 1
            return 503, {}

    flaky = Flaky()
    client = PageviewClient(base_url="http://pv.test", transport=flaky,
                            sleep=lambda s: None, min_interval=0.0,
                            max_retries=2)
    with pytest.raises(PageviewError, match="HTTP 503"):
        client.fetch_months("Busy Page")
    assert flaky.calls == 3  # first try plus two retries


def test_retry_recovers_after_transient_error():
    responses = [(503, {}), (200, _items({"2016-01": 42}))]

    def transport(url):
        return responses.pop(0)

    client = PageviewClient(base_url="http://pv.test", transport=transport,
                            sleep=lambda s: None, min_interval=0.0)
    assert client.fetch_avg_monthly("Shaky Page") == 42.0


# ---------------------------------------------------------------------------
# Annotation
# ---------------------------------------------------------------------------

def _dataset():
    answers = (TimedAnswer("value", 2020, None),)
    qs = (
        TemporalQuestion(id="q0", text="A?", answers=answers, page_title="Alpha"),
        TemporalQuestion(id="q1", text="B?", answers=answers, page_title="Alpha"),
        TemporalQuestion(id="q2", text="C?", answers=answers, page_title="Beta"),
        TemporalQuestion(id="q3", text="D?", answers=answers, page_title="Gamma"),
    )
    split = {"q0": "train", "q1": "train", "q2": "train", "q3": "dev"}
    return Dataset(questions=qs, split_assignment=split)


def test_annotate_fills_by_page():
    client, _ = _client({
        "Alpha": (200, _items({"2016-01": 100, "2016-02": 200})),
        "Beta": (200, _items({"2016-01": 50})),
        "Gamma": (200, _items({"2016-01": 10})),
    })
    out, report = annotate_popularity(_dataset(), client)
    pops = {q.id: q.popularity for q in out.questions}
    assert pops == {"q0": 150.0, "q1": 150.0, "q2": 50.0, "q3": 10.0}
    assert report.n_failed_pages == 0
    assert report.n_null == 0
    # train split holds q0, q1 (Alpha) and q2 (Beta)
    assert report.train_mean == pytest.approx((150.0 + 150.0 + 50.0) / 3)
    assert report.window == "2016-01..2023-12"


def test_annotate_leaves_failures_null():
    client, _ = _client({
        "Alpha": (200, _items({"2016-01": 100})),
        "Beta": (200, _items({"2016-01": 50})),
        # Gamma missing -> 404
    })
    out, report = annotate_popularity(_dataset(), client, failure_cap=0.5)
    pops = {q.id: q.popularity for q in out.questions}
    assert pops["q3"] is None
    assert pops["q0"] == 100.0
    assert report.n_failed_pages == 1
    assert report.n_null == 1
    assert "Gamma" in report.failures


def test_annotate_aborts_over_failure_cap():
    client, _ = _client({"Alpha": (200, _items({"2016-01": 100}))})
    with pytest.raises(AnnotationAborted) as exc:
        annotate_popularity(_dataset(), client, failure_cap=0.5)
    assert exc.value.report.n_failed_pages == 2


def test_annotate_is_idempotent_with_warm_cache(tmp_path):
    responses = {
        "Alpha": (200, _items({"2016-01": 100})),
        "Beta": (200, _items({"2016-01": 50})),
        "Gamma": (200, _items({"2016-01": 10})),
    }
    client, transport = _client(responses, tmp_path)
    first, _ = annotate_popularity(_dataset(), client)
    calls_after_first = len(transport.calls)
    second, _ = annotate_popularity(first, client)
    assert second == first
    assert len(transport.calls) == calls_after_first


def test_window_label():
    assert window_label() == "2016-01..2023-12"
    assert window_label(((2020, 5), (2021, 2))) == "2020-05..2021-02"
