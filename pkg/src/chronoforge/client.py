"""Completion clients: an HTTP endpoint wrapper and an offline stub oracle.

Both speak the same request/result contract, so generation, scoring, and
evaluation code never knows which one it is talking to. The HTTP client
adds retries, a bounded in-flight limit, and an append-only JSONL cache;
the stub answers from a dataset as if its knowledge froze at a fixed year.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from .kb import Dataset, TemporalQuestion, answers_at

API_KEY_ENV = "CHRONOFORGE_API_KEY"
UNKNOWN = "UNKNOWN-ENTITY"  # sentinel with zero token overlap with the corpus

QUESTION_LEAD_IN = "Answer the following question: "

RETRYABLE_STATUSES = frozenset({429} | set(range(500, 600)))


class TransportError(RuntimeError):
    """The endpoint failed after exhausting retries."""


class CapabilityError(RuntimeError):
    """The endpoint cannot satisfy a requested feature (e.g. logprobs)."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = 64
    temperature: float = 0.0
    n_samples: int = 1
    stop_sequences: tuple[str, ...] = ()
    want_logprobs: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def fingerprint(self) -> str:
        payload = json.dumps(
            [
                self.prompt,
                self.max_tokens,
                self.temperature,
                self.n_samples,
                list(self.stop_sequences),
                self.want_logprobs,
            ],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    texts: tuple[str, ...]
    mean_logprobs: tuple[float | None, ...] = ()

    def __post_init__(self):
        if self.mean_logprobs and len(self.mean_logprobs) != len(self.texts):
            raise ValueError("mean_logprobs length mismatch")


# A transport maps the JSON payload to (status_code, parsed body); the
# default posts to a completions-style HTTP endpoint. Tests inject fakes.
Transport = Callable[[dict], tuple[int, dict]]


class HTTPCompletionClient:
    """Client for a completions-compatible endpoint with cache and retries.

    Thread-safe: the in-flight semaphore, the retry/backoff loop, and the
    cache file are shared across calling threads.
    """

    def __init__(
        self,
        base_url: str,
        cache_path: str | Path | None = None,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        timeout: float = 60.0,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._transport = transport or self._http_transport
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._cache: dict[str, CompletionResult] = {}
        self._cache_fh = None
        if cache_path is not None:
            path = Path(cache_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.exists():
                self._load_cache(path)
            self._cache_fh = path.open("a", encoding="utf-8")

    def _load_cache(self, path: Path) -> None:
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._cache[rec["key"]] = CompletionResult(
                    tuple(rec["texts"]), tuple(rec.get("mean_logprobs") or [])
                )

    def _http_transport(self, payload: dict) -> tuple[int, dict]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.base_url, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return resp.status_code, body

    def complete(self, req: CompletionRequest) -> CompletionResult:
        key = req.fingerprint()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit

        payload = {
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "n": req.n_samples,
            "stop": list(req.stop_sequences) or None,
            "logprobs": 1 if req.want_logprobs else None,
        }
        body = None
        with self._sem:
            for attempt in range(self.max_retries + 1):
                status, body = self._transport(payload)
                if status == 200:
                    break
                if status in RETRYABLE_STATUSES and attempt < self.max_retries:
                    self._sleep(self.backoff_base * 2**attempt)
                    continue
                raise TransportError(f"endpoint returned {status} after {attempt + 1} tries")
            else:
                raise TransportError(f"exhausted {self.max_retries + 1} attempts")

        result = self._parse_body(body, req)
        with self._lock:
            self._cache[key] = result
            if self._cache_fh is not None:
                rec = {
                    "key": key,
                    "prompt": req.prompt,
                    "texts": list(result.texts),
                    "mean_logprobs": list(result.mean_logprobs) or None,
                }
                self._cache_fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                self._cache_fh.flush()
        return result

    @staticmethod
    def _parse_body(body: dict, req: CompletionRequest) -> CompletionResult:
        choices = body.get("choices")
        if not isinstance(choices, list) or len(choices) != req.n_samples:
            raise TransportError(
                f"malformed response: expected {req.n_samples} choices, "
                f"got {len(choices) if isinstance(choices, list) else body!r}"
            )
        texts = tuple(c.get("text", "") for c in choices)
        logprobs: list[float | None] = []
        for c in choices:
            lp = (c.get("logprobs") or {}).get("token_logprobs")
            logprobs.append(sum(lp) / len(lp) if lp else None)
        if req.want_logprobs and any(lp is None for lp in logprobs):
            raise CapabilityError("endpoint did not return token logprobs")
        return CompletionResult(texts, tuple(logprobs))


# ---------------------------------------------------------------------------
# Stub oracle
# ---------------------------------------------------------------------------

def stub_answer(q: TemporalQuestion, knowledge_year: int, horizon: int = 2100) -> str:
    """What a model frozen at ``knowledge_year`` says: its freshest answer.

    Looks for the latest year at or before the knowledge year with a
    non-empty answer set and returns the lexicographically smallest member,
    so the output is deterministic. Nothing on record → the unknown sentinel.
    """
    floor = min(a.start_year for a in q.answers)
    for year in range(knowledge_year, floor - 1, -1):
        found = answers_at(q, year, horizon)
        if found:
            return min(found)
    return UNKNOWN


@dataclass(frozen=True)
class StubOracleConfig:
    knowledge_year: int
    dataset: Dataset
    noise_rate: float = 0.0

    def __post_init__(self):
        if not self.dataset.epoch <= self.knowledge_year <= self.dataset.horizon:
            raise ValueError(
                f"knowledge_year {self.knowledge_year} outside "
                f"[{self.dataset.epoch}, {self.dataset.horizon}]"
            )
        if not 0 <= self.noise_rate <= 1:
            raise ValueError("noise_rate must be in [0, 1]")


class StubOracleClient:
    """Deterministic completion client frozen at a knowledge year.

    Finds the question after the last lead-in line of the prompt and
    answers it from the dataset as of the knowledge year, ignoring any
    year the prompt itself mentions (a frozen model cannot time-travel).
    Unknown questions, or the per-question noise draw, yield a sentinel
    that never overlaps real answers.
    """

    def __init__(self, config: StubOracleConfig):
        self.config = config
        self._by_text: dict[str, TemporalQuestion] = {}
        for q in sorted(config.dataset.questions, key=lambda q: q.id):
            self._by_text.setdefault(q.text.strip(), q)

    def _is_noisy(self, q: TemporalQuestion) -> bool:
        if self.config.noise_rate <= 0:
            return False
        digest = hashlib.sha256(f"noise:{q.id}".encode("utf-8")).digest()
        draw = int.from_bytes(digest[:8], "big") / 2**64
        return draw < self.config.noise_rate

    def _answer(self, prompt: str) -> tuple[str, TemporalQuestion | None]:
        idx = prompt.rfind(QUESTION_LEAD_IN)
        if idx < 0:
            return UNKNOWN, None
        question_text = prompt[idx + len(QUESTION_LEAD_IN):].split("\n", 1)[0].strip()
        q = self._by_text.get(question_text)
        if q is None or self._is_noisy(q):
            return UNKNOWN, q
        return stub_answer(q, self.config.knowledge_year), q

    def complete(self, req: CompletionRequest) -> CompletionResult:
        text, q = self._answer(req.prompt)
        for stop in req.stop_sequences:
            cut = text.find(stop)
            if cut >= 0:
                text = text[:cut]
        logprobs: tuple[float | None, ...] = ()
        if req.want_logprobs:
            seed = f"lp:{q.id if q else ''}:{text}".encode("utf-8")
            digest = hashlib.sha256(seed).digest()
            lp = -2.0 * int.from_bytes(digest[:8], "big") / 2**64
            logprobs = (lp,) * req.n_samples
        return CompletionResult((text,) * req.n_samples, logprobs)
