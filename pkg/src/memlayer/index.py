"""Hybrid search core: lexical BM25 and dense cosine channels fused by
reciprocal-rank fusion.

The indexed document for a triple is exactly "subject predicate object".
Summaries are never indexed; they are reached only through triple links.
Both channels are exact (no approximation), which keeps every ranking
oracle-checkable. Callers needing concurrent access go through the store,
which wraps these structures in a reader-writer lock.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionMismatch, DuplicateId, MissingSummaryLink, UnknownDocument
from .model import RetrievalEntry, RetrievalResult, Summary, Triple

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on any non-alphanumeric run. No stemming, no stopwords."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def triple_doc_text(triple: Triple) -> str:
    return f"{triple.subject} {triple.predicate} {triple.object}"


@dataclass(frozen=True)
class HybridParams:
    """BM25 free parameters and fusion knobs.

    fusion is "rrf" (default) or "weighted"; the weighted mode min-max
    normalizes each channel's scores and mixes them with weight alpha on the
    dense side.
    """

    k1: float = 1.2
    b: float = 0.75
    rrf_k: int = 60
    top_k_per_channel: int = 30
    final_k: int = 10
    fusion: str = "rrf"
    alpha: float = 0.5

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must be in [0, 1]")
        if self.rrf_k < 1:
            raise ValueError("rrf_k must be a positive integer")
        if self.final_k > self.top_k_per_channel:
            raise ValueError("final_k must be <= top_k_per_channel")
        if self.fusion not in ("rrf", "weighted"):
            raise ValueError("fusion must be 'rrf' or 'weighted'")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")


@dataclass
class LexicalIndex:
    """Inverted index over triple documents.

    postings maps term -> {triple_id: term_frequency}; N and avgdl are derived
    from doc_lengths so they can never drift out of sync.
    """

    postings: dict[str, dict[str, int]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)

    @property
    def n_docs(self) -> int:
        return len(self.doc_lengths)

    @property
    def avgdl(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)


class DenseIndex:
    """Exact cosine index: unit vectors of one fixed dimension, keyed by id."""

    def __init__(self, dim: int):
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        self._matrix: np.ndarray | None = None
        self._ids: list[str] | None = None

    def add(self, triple_id: str, vector: tuple[float, ...] | np.ndarray) -> None:
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise DimensionMismatch(f"vector has dimension {arr.shape}, index expects {self.dim}")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"vector norm {norm} is not 1 within 1e-6")
        self.vectors[triple_id] = arr
        self._matrix = None

    def remove(self, triple_id: str) -> None:
        del self.vectors[triple_id]
        self._matrix = None

    def _stacked(self) -> tuple[list[str], np.ndarray]:
        if self._matrix is None:
            self._ids = list(self.vectors.keys())
            self._matrix = (
                np.stack([self.vectors[i] for i in self._ids])
                if self._ids
                else np.empty((0, self.dim))
            )
        return self._ids, self._matrix  # type: ignore[return-value]


def bm25_score(
    query_terms: list[str],
    triple_id: str,
    index: LexicalIndex,
    params: HybridParams = HybridParams(),
) -> float:
    """Okapi BM25 with the non-negative ln(1 + .) IDF.

    Repeated query terms count once per distinct term.
    """
    if triple_id not in index.doc_lengths:
        raise UnknownDocument(triple_id)
    n_docs = index.n_docs
    avgdl = index.avgdl
    dl = index.doc_lengths[triple_id]
    score = 0.0
    for term in sorted(set(query_terms)):
        docs = index.postings.get(term, {})
        tf = docs.get(triple_id, 0)
        if tf == 0:
            continue
        n_q = len(docs)
        idf = math.log(1.0 + (n_docs - n_q + 0.5) / (n_q + 0.5))
        score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl))
    return score


def dense_search(
    query_vector: tuple[float, ...] | np.ndarray,
    index: DenseIndex,
    k: int,
) -> list[tuple[str, float]]:
    """Exact top-k by dot product (cosine for unit vectors); ties broken by
    triple id ascending."""
    query = np.asarray(query_vector, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimensionMismatch(f"query has dimension {query.shape}, index expects {index.dim}")
    ids, matrix = index._stacked()
    if not ids:
        return []
    scores = matrix @ query
    ranked = sorted(zip(ids, scores), key=lambda pair: (-pair[1], pair[0]))
    return [(tid, float(s)) for tid, s in ranked[:k]]


def index_insert(triple: Triple, lexical: LexicalIndex, dense: DenseIndex) -> None:
    """Insert into both channels; DuplicateId if the id is already indexed."""
    if triple.embedding is None:
        raise ValueError(f"triple {triple.id} has no embedding")
    if triple.id in lexical.doc_lengths:
        raise DuplicateId(triple.id)
    dense.add(triple.id, triple.embedding)
    terms = tokenize(triple_doc_text(triple))
    lexical.doc_lengths[triple.id] = len(terms)
    for term in terms:
        lexical.postings.setdefault(term, {})
        lexical.postings[term][triple.id] = lexical.postings[term].get(triple.id, 0) + 1


def index_remove(triple_id: str, lexical: LexicalIndex, dense: DenseIndex) -> None:
    """Remove from both channels; UnknownDocument if absent."""
    if triple_id not in lexical.doc_lengths:
        raise UnknownDocument(triple_id)
    dense.remove(triple_id)
    del lexical.doc_lengths[triple_id]
    for term in list(lexical.postings):
        docs = lexical.postings[term]
        docs.pop(triple_id, None)
        if not docs:
            del lexical.postings[term]


SummaryLookup = Callable[[str, str], Summary | None]


def _minmax(scores: dict[str, float]) -> dict[str, float]:
    if not scores:
        return {}
    lo, hi = min(scores.values()), max(scores.values())
    if hi - lo < 1e-12:
        return {k: 0.0 for k in scores}
    return {k: (v - lo) / (hi - lo) for k, v in scores.items()}


def hybrid_retrieve(
    query_text: str,
    lexical: LexicalIndex,
    dense: DenseIndex,
    embedder: Callable[[str], tuple[float, ...]],
    params: HybridParams,
    triples: Mapping[str, Triple],
    summaries: SummaryLookup | Mapping[tuple[str, str], Summary],
) -> RetrievalResult:
    """Fuse the two channel rankings and attach linked summaries.

    Each channel contributes its top_k_per_channel; under RRF a triple's fused
    score is the sum of 1/(rrf_k + rank) over the channels it appears in, rank
    starting at 1. A query with no tokens falls back to dense-only retrieval.
    Summaries are deduplicated in first-appearance order of the final entries.
    """
    if callable(summaries):
        lookup: SummaryLookup = summaries
    else:
        mapping = summaries
        lookup = lambda c, s: mapping.get((c, s))  # noqa: E731

    terms = tokenize(query_text)

    lexical_scores: dict[str, float] = {}
    if terms and lexical.doc_lengths:
        candidates = set()
        for term in set(terms):
            candidates.update(lexical.postings.get(term, {}))
        for tid in candidates:
            lexical_scores[tid] = bm25_score(terms, tid, lexical, params)
    lexical_top = sorted(lexical_scores.items(), key=lambda p: (-p[1], p[0]))
    lexical_top = [(tid, s) for tid, s in lexical_top if s > 0][: params.top_k_per_channel]
    lexical_rank = {tid: r for r, (tid, _) in enumerate(lexical_top, start=1)}

    query_vector = embedder(query_text)
    dense_top = dense_search(query_vector, dense, params.top_k_per_channel)
    dense_rank = {tid: r for r, (tid, _) in enumerate(dense_top, start=1)}
    dense_top_scores = dict(dense_top)

    if params.fusion == "rrf":
        fused: dict[str, float] = {}
        for tid, rank in lexical_rank.items():
            fused[tid] = fused.get(tid, 0.0) + 1.0 / (params.rrf_k + rank)
        for tid, rank in dense_rank.items():
            fused[tid] = fused.get(tid, 0.0) + 1.0 / (params.rrf_k + rank)
    else:
        lex_norm = _minmax({tid: s for tid, s in lexical_top})
        dense_norm = _minmax(dense_top_scores)
        fused = {}
        for tid in set(lex_norm) | set(dense_norm):
            fused[tid] = params.alpha * dense_norm.get(tid, 0.0) + (1 - params.alpha) * lex_norm.get(tid, 0.0)

    final = sorted(fused.items(), key=lambda p: (-p[1], p[0]))[: params.final_k]

    query_arr = np.asarray(query_vector, dtype=np.float64)
    entries = []
    for tid, fused_score in final:
        lex = lexical_scores.get(tid)
        if lex is None:
            lex = bm25_score(terms, tid, lexical, params) if terms else 0.0
        dense_score = dense_top_scores.get(tid)
        if dense_score is None:
            dense_score = float(dense.vectors[tid] @ query_arr)
        entries.append(
            RetrievalEntry(
                triple_id=tid,
                lexical_score=lex,
                dense_score=dense_score,
                fused_score=fused_score,
                lexical_rank=lexical_rank.get(tid),
                dense_rank=dense_rank.get(tid),
            )
        )

    linked: list[Summary] = []
    seen: set[tuple[str, str]] = set()
    for entry in entries:
        triple = triples[entry.triple_id]
        key = (triple.conversation_id, triple.session_id)
        if key in seen:
            continue
        seen.add(key)
        summary = lookup(*key)
        if summary is None:
            raise MissingSummaryLink(f"triple {entry.triple_id} links to missing summary {key}")
        linked.append(summary)

    return RetrievalResult(entries=tuple(entries), summaries=tuple(linked))
