"""Durable home of the dual-layer memory asset.

On-disk layout: one directory holding manifest.json plus two append-only data
files, triples.jsonl and summaries.jsonl. The manifest records per-file byte
length and sha256, which is what lets open() tell silent corruption from a
crash:

- same length, different hash  -> corruption (CorruptStore);
- shorter file                 -> torn tail from a crash, recover the valid
                                  prefix (a partial trailing line is dropped);
- longer file with intact
  prefix                       -> records appended before the manifest could
                                  be rewritten; accept them.

Indexes are derived state rebuilt on every open; the jsonl files are the only
source of truth. One process may write at a time (lock file); within a
process the store allows many concurrent readers or one writer.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

from .errors import (
    CorruptStore,
    DimensionMismatch,
    MissingSummaryLink,
    NotFound,
    StoreClosed,
    StoreLocked,
    VersionMismatch,
)
from .index import DenseIndex, HybridParams, LexicalIndex, hybrid_retrieve, index_insert
from .model import DEFAULT_EMBEDDING_DIM, RetrievalResult, Summary, Triple

FORMAT_VERSION = 1

TRIPLE_FIELDS = (
    "id",
    "subject",
    "predicate",
    "object",
    "conversation_id",
    "session_id",
    "source_message_index",
    "timestamp",
    "embedding",
)
SUMMARY_FIELDS = ("conversation_id", "session_id", "text", "timestamp")


class RWLock:
    """Many readers or one writer; no fairness guarantees needed at this scale."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


@dataclass(frozen=True)
class StoreManifest:
    format_version: int
    embedding_dimension: int
    n_triples: int
    n_summaries: int
    created_at: str
    updated_at: str
    checksum: str


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _triple_record(t: Triple) -> dict:
    return {
        "id": t.id,
        "subject": t.subject,
        "predicate": t.predicate,
        "object": t.object,
        "conversation_id": t.conversation_id,
        "session_id": t.session_id,
        "source_message_index": t.source_message_index,
        "timestamp": t.timestamp,
        "embedding": list(t.embedding) if t.embedding is not None else None,
    }


def _summary_record(s: Summary) -> dict:
    return {
        "conversation_id": s.conversation_id,
        "session_id": s.session_id,
        "text": s.text,
        "timestamp": s.timestamp,
    }


def _encode(record: dict) -> bytes:
    return (json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def _parse_triple(record: dict) -> Triple:
    embedding = record["embedding"]
    return Triple(
        id=record["id"],
        subject=record["subject"],
        predicate=record["predicate"],
        object=record["object"],
        conversation_id=record["conversation_id"],
        session_id=record["session_id"],
        source_message_index=record["source_message_index"],
        timestamp=record["timestamp"],
        embedding=tuple(float(x) for x in embedding) if embedding is not None else None,
    )


def _parse_summary(record: dict) -> Summary:
    return Summary(
        conversation_id=record["conversation_id"],
        session_id=record["session_id"],
        text=record["text"],
        timestamp=record["timestamp"],
    )


def _recover_records(path: Path, required: tuple[str, ...], label: str) -> tuple[list[dict], bytes]:
    """Parse complete lines; a partial trailing line (no newline) is a crash
    artifact and is dropped. A complete line that fails to parse or lacks a
    required field means the file is damaged, not torn."""
    data = path.read_bytes()
    records: list[dict] = []
    valid_bytes = b""
    offset = 0
    while offset < len(data):
        newline = data.find(b"\n", offset)
        if newline == -1:
            break  # torn tail
        line = data[offset : newline + 1]
        try:
            record = json.loads(line)
        except ValueError as exc:
            raise CorruptStore(f"{label} record at byte {offset} is not valid JSON: {exc}") from exc
        if not isinstance(record, dict) or any(k not in record for k in required):
            raise CorruptStore(f"{label} record at byte {offset} is missing required fields")
        records.append(record)
        valid_bytes += line
        offset = newline + 1
    return records, valid_bytes


class MemoryStore:
    """Open with MemoryStore.open(path, mode); mode is "read" or "read_write"."""

    def __init__(self):
        raise TypeError("use MemoryStore.open()")

    @classmethod
    def open(
        cls,
        path: str | Path,
        mode: str = "read_write",
        embedding_dimension: int = DEFAULT_EMBEDDING_DIM,
    ) -> "MemoryStore":
        if mode not in ("read", "read_write"):
            raise ValueError(f"mode must be 'read' or 'read_write', got {mode!r}")
        self = object.__new__(cls)
        self._path = Path(path)
        self._mode = mode
        self._closed = False
        self._lock = RWLock()
        self._lockfile: Path | None = None
        self._triples: dict[str, Triple] = {}
        self._summaries: dict[tuple[str, str], Summary] = {}
        self._manifest_path = self._path / "manifest.json"
        self._triples_path = self._path / "triples.jsonl"
        self._summaries_path = self._path / "summaries.jsonl"

        exists = self._manifest_path.exists()
        if not exists and mode == "read":
            raise NotFound(f"no store at {self._path}")
        if mode == "read_write":
            self._path.mkdir(parents=True, exist_ok=True)
            self._acquire_lockfile()
        try:
            if exists:
                self._load()
            else:
                for data_path in (self._triples_path, self._summaries_path):
                    if data_path.exists() and data_path.stat().st_size > 0:
                        raise CorruptStore(f"data file {data_path.name} present without a manifest")
                self._dim = embedding_dimension
                self._created_at = _now()
                self._triples_path.write_bytes(b"")
                self._summaries_path.write_bytes(b"")
                self._write_manifest()
        except BaseException:
            self._release_lockfile()
            raise
        self._rebuild_indexes()
        return self

    # -- persistence internals ------------------------------------------------

    def _acquire_lockfile(self) -> None:
        lockfile = self._path / ".lock"
        try:
            fd = os.open(lockfile, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLocked(f"store {self._path} is locked by another writer") from None
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        self._lockfile = lockfile

    def _release_lockfile(self) -> None:
        if self._lockfile is not None:
            self._lockfile.unlink(missing_ok=True)
            self._lockfile = None

    def _load(self) -> None:
        try:
            manifest = json.loads(self._manifest_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CorruptStore(f"manifest is not valid JSON: {exc}") from exc
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"store format {version}, this build supports {FORMAT_VERSION}")
        self._dim = manifest["embedding_dimension"]
        self._created_at = manifest["created_at"]

        dirty = False
        recovered: dict[str, list[dict]] = {}
        for key, path, fields in (
            ("triples", self._triples_path, TRIPLE_FIELDS),
            ("summaries", self._summaries_path, SUMMARY_FIELDS),
        ):
            expected = manifest.get("files", {}).get(key, {})
            actual = path.read_bytes() if path.exists() else b""
            if len(actual) == expected.get("bytes") and _sha256(actual) != expected.get("sha256"):
                raise CorruptStore(f"{key} file content does not match its recorded checksum")
            records, valid = _recover_records(path, fields, key)
            if len(valid) != len(actual) or len(actual) != expected.get("bytes"):
                dirty = True
            if len(actual) > expected.get("bytes", 0) and expected.get("bytes", 0) > 0:
                prefix = actual[: expected["bytes"]]
                if _sha256(prefix) != expected.get("sha256"):
                    raise CorruptStore(f"{key} file prefix diverges from its recorded checksum")
            recovered[key] = records

        for record in recovered["summaries"]:
            summary = _parse_summary(record)
            self._summaries[(summary.conversation_id, summary.session_id)] = summary
        orphaned = 0
        for record in recovered["triples"]:
            triple = _parse_triple(record)
            if (triple.conversation_id, triple.session_id) not in self._summaries:
                orphaned += 1  # its summary was lost in the torn tail
                dirty = True
                continue
            self._triples[triple.id] = triple

        if dirty and self._mode == "read_write":
            self._rewrite_data_files()
            self._write_manifest()

    def _rewrite_data_files(self) -> None:
        triple_bytes = b"".join(_encode(_triple_record(t)) for t in self._triples.values())
        summary_bytes = b"".join(_encode(_summary_record(s)) for s in self._summaries.values())
        self._triples_path.write_bytes(triple_bytes)
        self._summaries_path.write_bytes(summary_bytes)

    def _write_manifest(self) -> None:
        triple_bytes = self._triples_path.read_bytes()
        summary_bytes = self._summaries_path.read_bytes()
        manifest = {
            "format_version": FORMAT_VERSION,
            "embedding_dimension": self._dim,
            "counts": {"n_triples": len(self._triples), "n_summaries": len(self._summaries)},
            "created_at": self._created_at,
            "updated_at": _now(),
            "checksum": _sha256(triple_bytes + summary_bytes),
            "files": {
                "triples": {"bytes": len(triple_bytes), "sha256": _sha256(triple_bytes)},
                "summaries": {"bytes": len(summary_bytes), "sha256": _sha256(summary_bytes)},
            },
        }
        tmp = self._manifest_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, self._manifest_path)

    def _rebuild_indexes(self) -> None:
        self._lexical = LexicalIndex()
        self._dense = DenseIndex(self._dim)
        for triple in self._triples.values():
            index_insert(triple, self._lexical, self._dense)

    def _append(self, path: Path, blobs: list[bytes]) -> None:
        with path.open("ab") as handle:
            for blob in blobs:
                handle.write(blob)
            handle.flush()
            os.fsync(handle.fileno())

    def _check_open(self, for_write: bool = False) -> None:
        if self._closed:
            raise StoreClosed("store is closed")
        if for_write and self._mode != "read_write":
            raise StoreClosed("store is open read-only")

    # -- public API ------------------------------------------------------------

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._release_lockfile()

    def __enter__(self) -> "MemoryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def path(self) -> Path:
        return self._path

    @property
    def embedding_dimension(self) -> int:
        return self._dim

    @property
    def manifest(self) -> StoreManifest:
        """Counts come from live state: after a read-mode crash recovery the
        on-disk manifest still describes the pre-crash files."""
        self._check_open()
        with self._lock.read():
            raw = json.loads(self._manifest_path.read_text(encoding="utf-8"))
            return StoreManifest(
                format_version=raw["format_version"],
                embedding_dimension=self._dim,
                n_triples=len(self._triples),
                n_summaries=len(self._summaries),
                created_at=self._created_at,
                updated_at=raw["updated_at"],
                checksum=raw["checksum"],
            )

    def upsert_summary(self, summary: Summary) -> bool:
        """Insert or replace; returns False (and leaves the files byte-identical)
        when an equal summary is already stored."""
        self._check_open(for_write=True)
        key = (summary.conversation_id, summary.session_id)
        with self._lock.write():
            if self._summaries.get(key) == summary:
                return False
            self._summaries[key] = summary
            self._append(self._summaries_path, [_encode(_summary_record(summary))])
            self._write_manifest()
        return True

    def insert_triples(self, triples: list[Triple]) -> int:
        """Append new triples; duplicates of stored ids are silently skipped.

        Every triple must carry an embedding of the store dimension and link to
        an existing summary; validation happens before anything is written so a
        failed call leaves the store untouched.
        """
        self._check_open(for_write=True)
        with self._lock.write():
            fresh: list[Triple] = []
            seen: set[str] = set()
            for triple in triples:
                if triple.id in self._triples or triple.id in seen:
                    continue
                if triple.embedding is None:
                    raise ValueError(f"triple {triple.id} has no embedding")
                if len(triple.embedding) != self._dim:
                    raise DimensionMismatch(
                        f"triple {triple.id} embedding has dimension "
                        f"{len(triple.embedding)}, store expects {self._dim}"
                    )
                if (triple.conversation_id, triple.session_id) not in self._summaries:
                    raise MissingSummaryLink(
                        f"triple {triple.id} references session "
                        f"({triple.conversation_id}, {triple.session_id}) with no summary"
                    )
                seen.add(triple.id)
                fresh.append(triple)
            if not fresh:
                return 0
            self._append(self._triples_path, [_encode(_triple_record(t)) for t in fresh])
            for triple in fresh:
                self._triples[triple.id] = triple
                index_insert(triple, self._lexical, self._dense)
            self._write_manifest()
            return len(fresh)

    def get_summary(self, conversation_id: str, session_id: str) -> Summary | None:
        self._check_open()
        with self._lock.read():
            return self._summaries.get((conversation_id, session_id))

    def get_triple(self, triple_id: str) -> Triple | None:
        self._check_open()
        with self._lock.read():
            return self._triples.get(triple_id)

    def all_triples(self) -> list[Triple]:
        self._check_open()
        with self._lock.read():
            return list(self._triples.values())

    def all_summaries(self) -> list[Summary]:
        self._check_open()
        with self._lock.read():
            return list(self._summaries.values())

    def search(
        self,
        query_text: str,
        params: HybridParams,
        embedder: Callable[[str], tuple[float, ...]],
    ) -> RetrievalResult:
        """Hybrid retrieval over this store's triples, under a read lock so the
        ranking sees one consistent snapshot of both channels."""
        self._check_open()
        with self._lock.read():
            return hybrid_retrieve(
                query_text,
                self._lexical,
                self._dense,
                embedder,
                params,
                triples=self._triples,
                summaries=self._summaries,
            )

    @property
    def lexical_index(self) -> LexicalIndex:
        self._check_open()
        return self._lexical

    @property
    def dense_index(self) -> DenseIndex:
        self._check_open()
        return self._dense
