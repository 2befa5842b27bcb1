"""Background pipeline that distills a session transcript into triples and a
summary, links them, and writes them to the store.

The extraction contract with the model is a strict JSON array of
[subject, predicate, object, turn_index] quadruples; one automatic repair
retry re-prompts with the parse error before giving up. Invalid candidates
are dropped and counted, never fatal: robustness to model noise wins over
completeness here.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
from dataclasses import dataclass
from importlib import resources

from .errors import EmptyTranscript, ExtractionFormatError, InvalidTriple
from .gateway import ChatMessage, ChatRequest, LlmGateway
from .index import triple_doc_text
from .model import SessionTranscript, Summary, Triple, validate_triple
from .store import MemoryStore

logger = logging.getLogger(__name__)

REPAIR_NOTE = (
    "Your previous reply could not be parsed: {error}. "
    "Reply again with ONLY the required JSON array, no other text."
)


def _load_template(name: str) -> str:
    return resources.files("memlayer.prompts").joinpath(name).read_text(encoding="utf-8")


def _render_turns(transcript: SessionTranscript) -> str:
    return "\n".join(f"{i}. {turn.speaker}: {turn.text}" for i, turn in enumerate(transcript.turns))


def render_extraction_prompt(transcript: SessionTranscript) -> str:
    template = _load_template("extraction.txt")
    return template.replace("{{timestamp}}", transcript.timestamp).replace(
        "{{turns}}", _render_turns(transcript)
    )


def render_summary_prompt(transcript: SessionTranscript) -> str:
    template = _load_template("summary.txt")
    return template.replace("{{timestamp}}", transcript.timestamp).replace(
        "{{turns}}", _render_turns(transcript)
    )


def _require_turns(transcript: SessionTranscript) -> None:
    if not transcript.turns:
        raise EmptyTranscript(
            f"session ({transcript.conversation_id}, {transcript.session_id}) has no turns"
        )


def _parse_quadruples(raw: str) -> list[tuple]:
    parsed = json.loads(raw)
    if not isinstance(parsed, list):
        raise ValueError("expected a JSON array at the top level")
    return [tuple(item) if isinstance(item, (list, tuple)) else (item,) for item in parsed]


def extract_triples(transcript: SessionTranscript, gateway: LlmGateway) -> list[Triple]:
    """Run extraction and validate every candidate.

    Candidates that fail validation (blank fields, out-of-range turn index,
    wrong arity) are dropped and counted; duplicate ids are deduplicated.
    """
    _require_turns(transcript)
    prompt = render_extraction_prompt(transcript)
    messages = [ChatMessage("user", prompt)]
    raw = gateway.chat_complete(ChatRequest(gateway.chat_model, tuple(messages)))
    try:
        candidates = _parse_quadruples(raw)
    except ValueError as first_error:
        messages += [
            ChatMessage("assistant", raw),
            ChatMessage("user", REPAIR_NOTE.format(error=first_error)),
        ]
        raw = gateway.chat_complete(ChatRequest(gateway.chat_model, tuple(messages)))
        try:
            candidates = _parse_quadruples(raw)
        except ValueError as second_error:
            raise ExtractionFormatError(
                f"extraction output unparseable after repair retry: {second_error}"
            ) from second_error

    triples: dict[str, Triple] = {}
    dropped = 0
    for candidate in candidates:
        if len(candidate) not in (3, 4) or not all(isinstance(x, str) for x in candidate[:3]):
            dropped += 1
            continue
        index = candidate[3] if len(candidate) == 4 else 0
        if not isinstance(index, int) or isinstance(index, bool) or not 0 <= index < len(transcript.turns):
            dropped += 1
            continue
        try:
            triple = validate_triple(
                subject=candidate[0],
                predicate=candidate[1],
                object=candidate[2],
                conversation_id=transcript.conversation_id,
                session_id=transcript.session_id,
                source_message_index=index,
                timestamp=transcript.timestamp,
            )
        except InvalidTriple:
            dropped += 1
            continue
        triples[triple.id] = triple
    if dropped:
        logger.warning(
            "dropped %d invalid extraction candidates for session (%s, %s)",
            dropped,
            transcript.conversation_id,
            transcript.session_id,
        )
    return list(triples.values())


def summarize_session(transcript: SessionTranscript, gateway: LlmGateway) -> Summary:
    _require_turns(transcript)
    text = gateway.complete_text(render_summary_prompt(transcript))
    return Summary(
        conversation_id=transcript.conversation_id,
        session_id=transcript.session_id,
        text=text,
        timestamp=transcript.timestamp,
    )


def augment_session(
    transcript: SessionTranscript,
    gateway: LlmGateway,
    store: MemoryStore,
) -> tuple[int, bool]:
    """Distill one session and commit it: summary first, then embedded triples,
    so the triple-to-summary link holds at every observable point.

    All model calls happen before any write; a failure anywhere leaves the
    store untouched. Re-running with identical inputs is a no-op thanks to
    content-hash ids and upsert equality.
    """
    summary = summarize_session(transcript, gateway)
    extracted = extract_triples(transcript, gateway)
    embedded = [
        dataclasses.replace(t, embedding=gateway.embed_text(triple_doc_text(t)))
        for t in extracted
    ]
    summary_written = store.upsert_summary(summary)
    n_inserted = store.insert_triples(embedded)
    return n_inserted, summary_written


MAX_ATTEMPTS = 3


@dataclass
class AugmentationJob:
    transcript: SessionTranscript
    state: str = "pending"  # pending -> running -> done | failed; failed -> pending on retry
    attempts: int = 0
    error: str | None = None
    n_triples: int = 0
    summary_written: bool = False

    @property
    def session_key(self) -> tuple[str, str]:
        return (self.transcript.conversation_id, self.transcript.session_id)


class AugmentationQueue:
    """FIFO job queue consumed by a single worker.

    Multiple pending jobs for the same session collapse to the latest
    transcript. drain() processes synchronously; start()/stop() run the same
    loop on a background thread.
    """

    def __init__(self, gateway: LlmGateway, store: MemoryStore, max_attempts: int = MAX_ATTEMPTS):
        self.gateway = gateway
        self.store = store
        self.max_attempts = max_attempts
        self._queue: list[AugmentationJob] = []
        self._cond = threading.Condition()
        self._worker: threading.Thread | None = None
        self._stopping = False

    def submit(self, transcript: SessionTranscript) -> AugmentationJob:
        with self._cond:
            for job in self._queue:
                if job.state == "pending" and job.session_key == (
                    transcript.conversation_id,
                    transcript.session_id,
                ):
                    job.transcript = transcript
                    return job
            job = AugmentationJob(transcript)
            self._queue.append(job)
            self._cond.notify()
            return job

    def _take(self) -> AugmentationJob | None:
        with self._cond:
            return self._queue.pop(0) if self._queue else None

    def _run_job(self, job: AugmentationJob) -> None:
        job.state = "running"
        job.attempts += 1
        try:
            job.n_triples, job.summary_written = augment_session(
                job.transcript, self.gateway, self.store
            )
            job.state = "done"
            job.error = None
        except Exception as exc:
            job.state = "failed"
            job.error = str(exc)
            if job.attempts < self.max_attempts:
                job.state = "pending"
                with self._cond:
                    self._queue.append(job)

    def drain(self) -> list[AugmentationJob]:
        """Process jobs until the queue is empty; returns them in completion order."""
        finished: list[AugmentationJob] = []
        while (job := self._take()) is not None:
            self._run_job(job)
            if job.state in ("done", "failed"):
                finished.append(job)
        return finished

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stopping = False

        def loop() -> None:
            while True:
                with self._cond:
                    while not self._queue and not self._stopping:
                        self._cond.wait()
                    if self._stopping and not self._queue:
                        return
                    job = self._queue.pop(0)
                self._run_job(job)

        self._worker = threading.Thread(target=loop, name="augmentation-worker", daemon=True)
        self._worker.start()

    def stop(self) -> None:
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        if self._worker is not None:
            self._worker.join()
            self._worker = None
