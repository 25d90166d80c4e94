"""Small BM25 index for self-normalized text similarity.

Scores use the non-negative idf variant ln(1 + (N - df + 0.5) /
(df + 0.5)) so a document's self-score is always positive; the
normalized similarity Sim(x, y) = BM25(x, y) / BM25(x, x) then lands in
[0, 1] after clamping.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Iterable, Sequence

from .metrics import normalize_text


class BM25Index:
    """Corpus statistics plus per-document scoring.

    Documents are indexed positionally; ``sim(i, j)`` works on member
    ids while ``sim_text(x, y)`` scores arbitrary strings against the
    corpus statistics (terms the corpus has never seen get the df=0
    idf).
    """

    def __init__(
        self,
        docs: Iterable[str],
        k1: float = 0.9,
        b: float = 0.4,
        tokenize: Callable[[str], list[str]] = normalize_text,
    ) -> None:
        if k1 < 0 or not 0.0 <= b <= 1.0:
            raise ValueError(f"bad BM25 parameters k1={k1} b={b}")
        self.k1 = k1
        self.b = b
        self._tokenize = tokenize
        self._tokens: list[list[str]] = [tokenize(d) for d in docs]
        self._tfs: list[Counter] = [Counter(ts) for ts in self._tokens]
        self._lens = [len(ts) for ts in self._tokens]
        self._n = len(self._tokens)
        total_len = sum(self._lens)
        self._avgdl = (total_len / self._n) if total_len else 1.0
        df = Counter()
        for tf in self._tfs:
            df.update(tf.keys())
        self._df = df
        self._idf = {term: self._idf_for(d) for term, d in df.items()}
        # term -> member ids, for cheap duplicate-candidate generation
        self._postings: dict[str, list[int]] = {}
        for i, tf in enumerate(self._tfs):
            for term in tf:
                self._postings.setdefault(term, []).append(i)

    def _idf_for(self, df: int) -> float:
        return math.log(1.0 + (self._n - df + 0.5) / (df + 0.5))

    def idf(self, term: str) -> float:
        got = self._idf.get(term)
        return got if got is not None else self._idf_for(0)

    def __len__(self) -> int:
        return self._n

    def _score(self, query_tokens: Sequence[str], tf: Counter, length: int) -> float:
        norm = 1.0 - self.b + self.b * length / self._avgdl
        total = 0.0
        for term in query_tokens:
            f = tf.get(term, 0)
            if not f:
                continue
            total += self.idf(term) * f * (self.k1 + 1.0) / (f + self.k1 * norm)
        return total

    def score(self, query_tokens: Sequence[str], doc_id: int) -> float:
        return self._score(query_tokens, self._tfs[doc_id], self._lens[doc_id])

    def sim(self, i: int, j: int) -> float:
        """BM25(i, j) / BM25(i, i), clamped to [0, 1]."""
        self_score = self.score(self._tokens[i], i)
        if self_score <= 0.0:
            return 0.0
        return min(1.0, max(0.0, self.score(self._tokens[i], j) / self_score))

    def sim_text(self, x: str, y: str) -> float:
        """Like ``sim`` but over raw strings instead of member ids."""
        xt = self._tokenize(x)
        x_tf, x_len = Counter(xt), len(xt)
        self_score = self._score(xt, x_tf, x_len)
        if self_score <= 0.0:
            return 0.0
        yt = self._tokenize(y)
        value = self._score(xt, Counter(yt), len(yt)) / self_score
        return min(1.0, max(0.0, value))

    def candidates(self, i: int) -> set[int]:
        """Member ids sharing at least one term with document ``i``."""
        out: set[int] = set()
        for term in self._tfs[i]:
            out.update(self._postings[term])
        out.discard(i)
        return out


def normalized_bm25_sim(x: str, y: str, index: BM25Index) -> float:
    """Sim(x, y) = BM25(x, y) / BM25(x, x) against a shared index."""
    return index.sim_text(x, y)
