"""Monthly Wikipedia pageview counts, cached, for question popularity.

Popularity is the arithmetic mean of monthly views over a fixed window
(2016-01 through 2023-12). Months the API does not report are left out
of the mean rather than counted as zero, so late-created pages are not
penalized.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable
from urllib.parse import quote

import requests

from .kb import Dataset

log = logging.getLogger(__name__)

PV_BASE_ENV = "CHRONOFORGE_PV_BASE"
DEFAULT_PV_BASE = (
    "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article/"
    "en.wikipedia/all-access/all-agents"
)

Month = tuple[int, int]
DEFAULT_WINDOW: tuple[Month, Month] = ((2016, 1), (2023, 12))

# transport: url -> (status code, parsed JSON body)
Transport = Callable[[str], tuple[int, dict]]


class PageviewError(RuntimeError):
    """Base class for pageview fetch failures."""


class PageNotFound(PageviewError):
    """The wiki has no such article."""


class NoPageviewData(PageviewError):
    """The article exists but reported no months in the window."""


def _month_key(year: int, month: int) -> str:
    return f"{year:04d}-{month:02d}"


def _window_months(window: tuple[Month, Month]) -> list[str]:
    (sy, sm), (ey, em) = window
    out = []
    y, m = sy, sm
    while (y, m) <= (ey, em):
        out.append(_month_key(y, m))
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def window_label(window: tuple[Month, Month] = DEFAULT_WINDOW) -> str:
    (sy, sm), (ey, em) = window
    return f"{_month_key(sy, sm)}..{_month_key(ey, em)}"


class PageviewClient:
    """Fetches per-article monthly views with a JSONL cache.

    Thread-safe; at most ``max_in_flight`` requests run at once and
    consecutive requests are spaced ``min_interval`` seconds apart.
    """

    def __init__(
        self,
        base_url: str | None = None,
        cache_path: str | Path | None = None,
        window: tuple[Month, Month] = DEFAULT_WINDOW,
        transport: Transport | None = None,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        max_in_flight: int = 2,
        min_interval: float = 0.05,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        env_base = os.environ.get(PV_BASE_ENV)
        self.base_url = (base_url or env_base or DEFAULT_PV_BASE).rstrip("/")
        self.window = window
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._transport = transport or self._http_transport
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._pace_lock = threading.Lock()
        self._min_interval = min_interval
        self._last_request = 0.0
        self._cache: dict[str, dict[str, int]] = {}
        self._cache_lock = threading.Lock()
        self._cache_path = Path(cache_path) if cache_path else None
        if self._cache_path and self._cache_path.exists():
            self._load_cache(self._cache_path)

    def _load_cache(self, path: Path) -> None:
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._cache[rec["key"]] = rec["months"]

    def _http_transport(self, url: str) -> tuple[int, dict]:
        resp = requests.get(url, timeout=self.timeout)
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return resp.status_code, body

    def _url(self, page_title: str) -> str:
        article = quote(page_title.replace(" ", "_"), safe="")
        (sy, sm), (ey, em) = self.window
        return (
            f"{self.base_url}/{article}/monthly/"
            f"{sy:04d}{sm:02d}01/{ey:04d}{em:02d}01"
        )

    def _paced_request(self, url: str) -> tuple[int, dict]:
        with self._pace_lock:
            wait = self._last_request + self._min_interval - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last_request = time.monotonic()
        with self._gate:
            return self._transport(url)

    def fetch_months(self, page_title: str) -> dict[str, int]:
        """Raw month -> views for the window, from cache when warm."""
        if not page_title.strip():
            raise ValueError("empty page title")
        key = f"{page_title}|{window_label(self.window)}"
        with self._cache_lock:
            if key in self._cache:
                return dict(self._cache[key])

        url = self._url(page_title)
        attempt = 0
        while True:
            status, body = self._paced_request(url)
            if status == 200:
                break
            if status == 404:
                raise PageNotFound(page_title)
            attempt += 1
            if attempt > self.max_retries:
                raise PageviewError(f"{page_title}: HTTP {status}")
            self._sleep(self.backoff_base * 2 ** (attempt - 1))

        allowed = set(_window_months(self.window))
        months: dict[str, int] = {}
        for item in body.get("items", []):
            ts = str(item.get("timestamp", ""))
            if len(ts) < 6:
                continue
            mk = f"{ts[:4]}-{ts[4:6]}"
            if mk not in allowed:
                continue  # ignore out-of-window rows
            views = int(item.get("views", 0))
            if views < 0:
                raise PageviewError(f"{page_title}: negative views in {mk}")
            months[mk] = views

        with self._cache_lock:
            self._cache[key] = months
            if self._cache_path:
                with self._cache_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(
                        {"key": key, "months": months}, ensure_ascii=False,
                        sort_keys=True,
                    ) + "\n")
        return dict(months)

    def fetch_avg_monthly(self, page_title: str) -> float:
        """Mean monthly views over months with data."""
        months = self.fetch_months(page_title)
        if not months:
            raise NoPageviewData(page_title)
        return sum(months.values()) / len(months)


# ---------------------------------------------------------------------------
# Dataset annotation
# ---------------------------------------------------------------------------

@dataclass
class AnnotationReport:
    window: str = window_label()
    n_pages: int = 0
    n_failed_pages: int = 0
    n_questions: int = 0
    n_null: int = 0
    train_mean: float | None = None
    failures: dict[str, str] = field(default_factory=dict)


class AnnotationAborted(RuntimeError):
    def __init__(self, report: AnnotationReport):
        super().__init__(
            f"{report.n_failed_pages}/{report.n_pages} pages failed to fetch"
        )
        self.report = report


def annotate_popularity(
    dataset: Dataset,
    client: PageviewClient,
    failure_cap: float = 0.2,
) -> tuple[Dataset, AnnotationReport]:
    """Dataset copy with every question's page popularity filled in.

    Pages that fail to fetch leave their questions' popularity null;
    when more than ``failure_cap`` of pages fail the run aborts instead
    of silently producing a mostly-null dataset.
    """
    report = AnnotationReport(window=window_label(client.window))
    pages = sorted({q.page_title for q in dataset.questions})
    report.n_pages = len(pages)
    averages: dict[str, float | None] = {}
    for page in pages:
        try:
            averages[page] = client.fetch_avg_monthly(page)
        except PageviewError as exc:
            log.warning("pageviews for %r unavailable: %s", page, exc)
            averages[page] = None
            report.n_failed_pages += 1
            report.failures[page] = str(exc)
    if report.n_pages and report.n_failed_pages / report.n_pages > failure_cap:
        raise AnnotationAborted(report)

    questions = tuple(
        replace(q, popularity=averages[q.page_title]) for q in dataset.questions
    )
    report.n_questions = len(questions)
    report.n_null = sum(1 for q in questions if q.popularity is None)
    out = replace(dataset, questions=questions)

    train = [q for q in out.split("train") if q.popularity is not None]
    if train:
        report.train_mean = sum(q.popularity for q in train) / len(train)
        log.info(
            "train-split mean popularity over %s: %.1f",
            report.window, report.train_mean,
        )
    return out, report
