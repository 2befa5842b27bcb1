"""Domain vocabulary: triples, summaries, transcripts, retrieval results.

All values are immutable after construction and safe to share across threads.
Serialization lives in the store module; this module only constructs and
validates.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import BadEmbeddingNorm, EmptyField, InvalidTriple

EMBEDDING_NORM_TOL = 1e-6
DEFAULT_EMBEDDING_DIM = 128


def canonical_timestamp(value: str) -> str:
    """Normalize an ISO-8601 timestamp to UTC 'YYYY-MM-DDTHH:MM:SSZ'.

    Naive inputs are taken as UTC. The canonical form sorts lexicographically
    in chronological order, which the answer prompt's date arithmetic relies on.
    """
    text = value.strip()
    if not text:
        raise ValueError("timestamp is empty")
    probe = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(probe)
    except ValueError as exc:
        raise ValueError(f"timestamp {value!r} is not ISO-8601") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def triple_id(
    conversation_id: str,
    session_id: str,
    source_message_index: int,
    subject: str,
    predicate: str,
    object: str,
) -> str:
    """Deterministic content hash; identical facts get identical ids."""
    parts = [conversation_id, session_id, str(source_message_index), subject, predicate, object]
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return digest[:32]


@dataclass(frozen=True)
class Triple:
    """One atomic (subject, predicate, object) fact with provenance."""

    id: str
    subject: str
    predicate: str
    object: str
    conversation_id: str
    session_id: str
    source_message_index: int
    timestamp: str
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Summary:
    """High-level overview of one conversation session; link target for triples."""

    conversation_id: str
    session_id: str
    text: str
    timestamp: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("summary text is empty")
        object.__setattr__(self, "timestamp", canonical_timestamp(self.timestamp))


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class SessionTranscript:
    """Raw dialogue for one session; turn indices are 0-based and dense."""

    conversation_id: str
    session_id: str
    timestamp: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "timestamp", canonical_timestamp(self.timestamp))
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class RetrievalEntry:
    """One ranked triple with per-channel and fused scores.

    A rank of None means the triple did not reach that channel's top-k; the
    raw scores are still reported for inspection.
    """

    triple_id: str
    lexical_score: float
    dense_score: float
    fused_score: float
    lexical_rank: int | None = None
    dense_rank: int | None = None


@dataclass(frozen=True)
class RetrievalResult:
    """Entries sorted by fused score descending (ties by triple id), plus the
    deduplicated summaries linked from those entries in first-appearance order."""

    entries: tuple[RetrievalEntry, ...] = ()
    summaries: tuple[Summary, ...] = ()


@dataclass(frozen=True)
class TokenStats:
    context_tokens: int
    question_tokens: int
    budget: int

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.context_tokens > self.budget:
            raise ValueError(
                f"context_tokens {self.context_tokens} exceeds budget {self.budget}"
            )


def _require_nonblank(name: str, value: str) -> str:
    trimmed = value.strip()
    if not trimmed:
        raise EmptyField(f"{name} is blank")
    return trimmed


def validate_triple(
    subject: str,
    predicate: str,
    object: str,
    conversation_id: str,
    session_id: str,
    source_message_index: int,
    timestamp: str,
    embedding: tuple[float, ...] | list[float] | None = None,
) -> Triple:
    """Build a Triple from candidate fields, trimming whitespace and enforcing
    every construction invariant. The id is the content hash of the fact."""
    subject = _require_nonblank("subject", subject)
    predicate = _require_nonblank("predicate", predicate)
    obj = _require_nonblank("object", object)
    if not isinstance(source_message_index, int) or isinstance(source_message_index, bool):
        raise InvalidTriple("source_message_index must be an integer")
    if source_message_index < 0:
        raise InvalidTriple("source_message_index must be non-negative")
    try:
        ts = canonical_timestamp(timestamp)
    except ValueError as exc:
        raise InvalidTriple(str(exc)) from exc
    vec: tuple[float, ...] | None = None
    if embedding is not None:
        vec = tuple(float(x) for x in embedding)
        norm = math.sqrt(sum(x * x for x in vec))
        if abs(norm - 1.0) > EMBEDDING_NORM_TOL:
            raise BadEmbeddingNorm(f"embedding norm {norm} deviates from 1 by > {EMBEDDING_NORM_TOL}")
    return Triple(
        id=triple_id(conversation_id, session_id, source_message_index, subject, predicate, obj),
        subject=subject,
        predicate=predicate,
        object=obj,
        conversation_id=conversation_id,
        session_id=session_id,
        source_message_index=source_message_index,
        timestamp=ts,
        embedding=vec,
    )
