"""Exception hierarchy shared across the package.

Everything raised on purpose derives from MemlayerError so callers can catch
one base type at process boundaries (CLI, benchmark runner).
"""

from __future__ import annotations


class MemlayerError(Exception):
    """Base class for all errors raised by this package."""


# -- domain model ------------------------------------------------------------

class InvalidTriple(MemlayerError, ValueError):
    """Candidate triple violates a construction invariant."""


class EmptyField(InvalidTriple):
    """Subject, predicate, or object is blank after trimming."""


class BadEmbeddingNorm(InvalidTriple):
    """Embedding deviates from unit L2 norm by more than the tolerance."""


class EmptyTranscript(MemlayerError, ValueError):
    """Augmentation input transcript has no turns."""


# -- gateway -----------------------------------------------------------------

class GatewayError(MemlayerError):
    """Base class for model-inference failures."""


class TransportError(GatewayError):
    """Network-level failure (connect, timeout) after all retries."""


class ProtocolError(GatewayError):
    """Response body does not match the expected wire shape."""


class RemoteError(GatewayError):
    """Non-2xx HTTP response; carries status code and body text."""

    def __init__(self, status: int, body: str):
        super().__init__(f"remote returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


class EmptyInput(MemlayerError, ValueError):
    """Text input that must be non-empty was empty."""


class FixtureMissing(GatewayError):
    """Scripted backend has no recorded completion for this prompt hash."""


# -- augmentation ------------------------------------------------------------

class ExtractionFormatError(MemlayerError):
    """Extraction output unparseable even after the repair retry."""


# -- retrieval index ---------------------------------------------------------

class UnknownDocument(MemlayerError, KeyError):
    """Triple id not present in the index."""


class DuplicateId(MemlayerError, ValueError):
    """Triple id already present in the index."""


class DimensionMismatch(MemlayerError, ValueError):
    """Vector dimension differs from the index dimension."""


# -- context builder ---------------------------------------------------------

class BudgetTooSmall(MemlayerError, ValueError):
    """Token budget below the minimum needed for the block skeleton."""


class EmptyQuestion(MemlayerError, ValueError):
    """Answer prompt requested for a blank question."""


# -- store -------------------------------------------------------------------

class StoreError(MemlayerError):
    """Base class for persistence failures."""


class CorruptStore(StoreError):
    """Data files fail integrity verification."""


class VersionMismatch(StoreError):
    """Store format version not supported by this build."""


class NotFound(StoreError):
    """Store directory missing in read mode."""


class StoreClosed(StoreError):
    """Operation on a closed store handle."""


class StoreLocked(StoreError):
    """Another process holds the write lock."""


class MissingSummaryLink(StoreError):
    """Triple references a (conversation, session) with no stored summary."""


# -- eval harness ------------------------------------------------------------

class SchemaError(MemlayerError, ValueError):
    """Dataset file violates the documented schema; message names the path."""


class JudgeFormatError(MemlayerError):
    """Judge output unparseable even after the repair retry."""


class KeyMismatch(MemlayerError, ValueError):
    """Accuracy and count maps cover different category sets."""
