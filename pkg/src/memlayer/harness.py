"""Benchmark harness: dataset ingestion, answer generation, judge scoring,
category-weighted accuracy, and token/cost accounting.

Question categories follow the benchmark's fixed order: 1 multi-hop,
2 temporal, 3 open-domain, 4 single-hop, 5 adversarial. Category 5 is
excluded from evaluation for comparability with published results.

A run checkpoints every judged item to checkpoint.jsonl inside the work
directory, so interrupted runs resume without recomputing; the final
records.jsonl and report.json are written sorted and contain no wall-clock
state, making completed runs byte-reproducible under the scripted backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from .augmentation import augment_session
from .context import (
    DEFAULT_BUDGET,
    TOKEN_COUNTER_NAME,
    render_answer_prompt,
    render_memory_block,
)
from .errors import EmptyInput, JudgeFormatError, KeyMismatch, NotFound, SchemaError
from .gateway import ChatMessage, ChatRequest, LlmGateway
from .index import HybridParams
from .model import DEFAULT_EMBEDDING_DIM, RetrievalResult, SessionTranscript, Turn
from .store import MemoryStore

logger = logging.getLogger(__name__)

CATEGORY_LABELS = {1: "multi-hop", 2: "temporal", 3: "open-domain", 4: "single-hop", 5: "adversarial"}
ADVERSARIAL_CATEGORY = 5


@dataclass(frozen=True)
class QAItem:
    question: str
    gold_answer: str
    category: int
    conversation_id: str


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    sessions: tuple[SessionTranscript, ...]


@dataclass(frozen=True)
class LocomoDataset:
    conversations: tuple[Conversation, ...]
    qa: tuple[QAItem, ...]


@dataclass(frozen=True)
class EvalRecord:
    item: QAItem
    generated_answer: str
    label: str  # CORRECT | WRONG
    judge_explanation: str
    context_tokens: int
    round: int = 1
    item_index: int = 0
    error: str | None = None  # disjoint annotation; label is still binary

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "item_index": self.item_index,
            "question": self.item.question,
            "gold_answer": self.item.gold_answer,
            "category": self.item.category,
            "conversation_id": self.item.conversation_id,
            "generated_answer": self.generated_answer,
            "label": self.label,
            "judge_explanation": self.judge_explanation,
            "context_tokens": self.context_tokens,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalRecord":
        return cls(
            item=QAItem(
                question=raw["question"],
                gold_answer=raw["gold_answer"],
                category=raw["category"],
                conversation_id=raw["conversation_id"],
            ),
            generated_answer=raw["generated_answer"],
            label=raw["label"],
            judge_explanation=raw["judge_explanation"],
            context_tokens=raw["context_tokens"],
            round=raw["round"],
            item_index=raw["item_index"],
            error=raw.get("error"),
        )


@dataclass(frozen=True)
class CostReport:
    mean_added_tokens: float
    context_cost_usd: float
    footprint_percent: float
    price_per_million_usd: float

    def __post_init__(self):
        for name in ("mean_added_tokens", "context_cost_usd", "footprint_percent", "price_per_million_usd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


# -- dataset loading ---------------------------------------------------------


def _fail(path: str, message: str) -> SchemaError:
    return SchemaError(f"{path}: {message}")


def _require(value, path: str, kind: type, message: str):
    if not isinstance(value, kind):
        raise _fail(path, message)
    return value


def load_locomo(file: str | Path) -> LocomoDataset:
    """Load the normalized dataset schema; errors name the offending field."""
    path = Path(file)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise NotFound(f"dataset file {path} does not exist") from None
    except ValueError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return parse_locomo(raw)


def parse_locomo(raw) -> LocomoDataset:
    """Validate an already-parsed normalized dataset object."""
    _require(raw, "$", dict, "expected a JSON object with 'conversations' and 'qa'")

    conversations: list[Conversation] = []
    raw_conversations = _require(raw.get("conversations", []), "conversations", list, "expected a list")
    for ci, conv in enumerate(raw_conversations):
        cpath = f"conversations[{ci}]"
        _require(conv, cpath, dict, "expected an object")
        conv_id = _require(conv.get("conversation_id"), f"{cpath}.conversation_id", str, "expected a string")
        sessions: list[SessionTranscript] = []
        raw_sessions = _require(conv.get("sessions", []), f"{cpath}.sessions", list, "expected a list")
        for si, sess in enumerate(raw_sessions):
            spath = f"{cpath}.sessions[{si}]"
            _require(sess, spath, dict, "expected an object")
            session_id = _require(sess.get("session_id"), f"{spath}.session_id", str, "expected a string")
            timestamp = _require(sess.get("timestamp"), f"{spath}.timestamp", str, "expected a string")
            turns: list[Turn] = []
            raw_turns = _require(sess.get("turns", []), f"{spath}.turns", list, "expected a list")
            for ti, turn in enumerate(raw_turns):
                tpath = f"{spath}.turns[{ti}]"
                _require(turn, tpath, dict, "expected an object")
                speaker = _require(turn.get("speaker"), f"{tpath}.speaker", str, "expected a string")
                text = _require(turn.get("text"), f"{tpath}.text", str, "expected a string")
                turns.append(Turn(speaker, text))
            try:
                sessions.append(
                    SessionTranscript(conv_id, session_id, timestamp, tuple(turns))
                )
            except ValueError as exc:
                raise _fail(f"{spath}.timestamp", str(exc)) from exc
        conversations.append(Conversation(conv_id, tuple(sessions)))

    qa: list[QAItem] = []
    raw_qa = _require(raw.get("qa", []), "qa", list, "expected a list")
    for qi, item in enumerate(raw_qa):
        qpath = f"qa[{qi}]"
        _require(item, qpath, dict, "expected an object")
        question = _require(item.get("question"), f"{qpath}.question", str, "expected a string")
        answer = item.get("answer", "")
        if not isinstance(answer, (str, int, float)):
            raise _fail(f"{qpath}.answer", "expected a string or number")
        category = item.get("category")
        if not isinstance(category, int) or isinstance(category, bool) or category not in CATEGORY_LABELS:
            raise _fail(f"{qpath}.category", f"expected an integer in {sorted(CATEGORY_LABELS)}, got {category!r}")
        conv_id = _require(item.get("conversation_id"), f"{qpath}.conversation_id", str, "expected a string")
        qa.append(QAItem(question=question, gold_answer=str(answer), category=category, conversation_id=conv_id))

    return LocomoDataset(conversations=tuple(conversations), qa=tuple(qa))


_RELEASE_DATE_FORMATS = ("%I:%M %p on %d %B, %Y", "%H:%M on %d %B, %Y", "%d %B, %Y")


def _parse_release_timestamp(value: str, path: str) -> str:
    for fmt in _RELEASE_DATE_FORMATS:
        try:
            dt = datetime.strptime(value.strip(), fmt).replace(tzinfo=timezone.utc)
            return dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        except ValueError:
            continue
    raise _fail(path, f"unrecognized session date {value!r}")


def convert_locomo_release(raw: list | dict) -> dict:
    """Adapter from the public benchmark release layout to the normalized
    schema consumed by load_locomo. Accepts the release's list of samples,
    each holding a 'conversation' object with session_N / session_N_date_time
    keys and a 'qa' list."""
    samples = raw if isinstance(raw, list) else [raw]
    conversations = []
    qa = []
    for i, sample in enumerate(samples):
        spath = f"$[{i}]"
        _require(sample, spath, dict, "expected a sample object")
        conv = _require(sample.get("conversation"), f"{spath}.conversation", dict, "expected an object")
        conv_id = str(sample.get("sample_id", f"conversation-{i + 1}"))
        sessions = []
        numbers = sorted(
            int(m.group(1))
            for key in conv
            if (m := re.fullmatch(r"session_(\d+)", key)) and isinstance(conv[key], list)
        )
        for n in numbers:
            turns = [
                {"speaker": str(t.get("speaker", "")), "text": str(t.get("text", ""))}
                for t in conv[f"session_{n}"]
                if isinstance(t, dict)
            ]
            date_key = f"session_{n}_date_time"
            timestamp = _parse_release_timestamp(
                str(conv.get(date_key, "")), f"{spath}.conversation.{date_key}"
            )
            sessions.append({"session_id": f"session_{n}", "timestamp": timestamp, "turns": turns})
        conversations.append({"conversation_id": conv_id, "sessions": sessions})
        for j, item in enumerate(sample.get("qa", [])):
            qpath = f"{spath}.qa[{j}]"
            _require(item, qpath, dict, "expected an object")
            answer = item.get("answer", item.get("adversarial_answer", ""))
            qa.append(
                {
                    "question": str(item.get("question", "")),
                    "answer": answer if isinstance(answer, (str, int, float)) else str(answer),
                    "category": item.get("category"),
                    "conversation_id": conv_id,
                }
            )
    return {"conversations": conversations, "qa": qa}


def filter_eval_set(qa: tuple[QAItem, ...] | list[QAItem]) -> list[QAItem]:
    """Drop the adversarial category; order preserved."""
    return [item for item in qa if item.category != ADVERSARIAL_CATEGORY]


def category_counts(qa) -> dict[int, int]:
    counts: dict[int, int] = {}
    for item in qa:
        counts[item.category] = counts.get(item.category, 0) + 1
    return counts


# -- answering and judging ----------------------------------------------------


def answer_question(
    item: QAItem,
    store: MemoryStore | None,
    params: HybridParams,
    budget: int,
    gateway: LlmGateway,
    answer_model: str | None = None,
) -> tuple[str, int]:
    """retrieve -> render block -> render prompt -> chat. Returns the generated
    answer and the context tokens the memory layer added. A missing store means
    an empty context; the question is still answered."""
    if store is None:
        result = RetrievalResult()
        triples = {}
    else:
        result = store.search(item.question, params, gateway.embed_text)
        triples = {t.id: t for t in store.all_triples()}
    block = render_memory_block(result, budget, triples)
    prompt = render_answer_prompt(block, item.question)
    answer = gateway.complete_text(prompt, model=answer_model)
    return answer, block.stats.context_tokens


def judge_prompt_template() -> str:
    return resources.files("memlayer.prompts").joinpath("judge.txt").read_text(encoding="utf-8")


def render_judge_prompt(question: str, gold_answer: str, generated_answer: str) -> str:
    return (
        judge_prompt_template()
        .replace("{question}", question)
        .replace("{gold_answer}", gold_answer)
        .replace("{generated_answer}", generated_answer)
    )


_JUDGE_REPAIR_NOTE = (
    "Your previous reply could not be parsed: {error}. "
    'Reply again with ONLY a JSON object of the form {{"label": "CORRECT"}} or {{"label": "WRONG"}}.'
)


def _parse_judge_label(raw: str) -> str:
    candidates = [raw.strip()]
    candidates += re.findall(r"\{[^{}]*\}", raw)
    for candidate in candidates:
        try:
            parsed = json.loads(candidate)
        except ValueError:
            continue
        if isinstance(parsed, dict) and parsed.get("label") in ("CORRECT", "WRONG"):
            return parsed["label"]
    raise ValueError('no JSON object with "label": "CORRECT" or "WRONG" found')


def judge_answer(
    item: QAItem,
    generated_answer: str,
    gateway: LlmGateway,
    judge_model: str | None = None,
) -> tuple[str, str]:
    """Label the generated answer CORRECT or WRONG. One repair retry on
    unparseable output, then JudgeFormatError."""
    prompt = render_judge_prompt(item.question, item.gold_answer, generated_answer)
    messages = [ChatMessage("user", prompt)]
    raw = gateway.chat_complete(ChatRequest(judge_model or gateway.chat_model, tuple(messages)))
    try:
        return _parse_judge_label(raw), raw
    except ValueError as first_error:
        messages += [
            ChatMessage("assistant", raw),
            ChatMessage("user", _JUDGE_REPAIR_NOTE.format(error=first_error)),
        ]
        raw = gateway.chat_complete(ChatRequest(judge_model or gateway.chat_model, tuple(messages)))
        try:
            return _parse_judge_label(raw), raw
        except ValueError as second_error:
            raise JudgeFormatError(
                f"judge output unparseable after repair retry: {second_error}"
            ) from second_error


# -- aggregate arithmetic ------------------------------------------------------


def weighted_overall(per_category_accuracy: dict[int, float], counts: dict[int, int]) -> float:
    """Question-count-weighted mean of per-category accuracies (percent)."""
    if set(per_category_accuracy) != set(counts):
        raise KeyMismatch(
            f"accuracy keys {sorted(per_category_accuracy)} != count keys {sorted(counts)}"
        )
    if not counts:
        raise KeyMismatch("no categories to average")
    for category, n in counts.items():
        if n <= 0:
            raise ValueError(f"count for category {category} must be positive")
    total = sum(counts.values())
    return sum(per_category_accuracy[c] * counts[c] for c in sorted(counts)) / total


def cost_report(
    per_query_tokens: list[int],
    price_per_million_usd: float,
    full_context_mean_tokens: float,
) -> CostReport:
    """Mean added tokens, dollar cost per query, and context footprint
    relative to the full-conversation baseline."""
    if not per_query_tokens:
        raise EmptyInput("per_query_tokens is empty")
    if price_per_million_usd <= 0:
        raise ValueError("price_per_million_usd must be > 0")
    if full_context_mean_tokens <= 0:
        raise ValueError("full_context_mean_tokens must be > 0")
    mean_tokens = sum(per_query_tokens) / len(per_query_tokens)
    return CostReport(
        mean_added_tokens=mean_tokens,
        context_cost_usd=mean_tokens * price_per_million_usd / 1e6,
        footprint_percent=100.0 * mean_tokens / full_context_mean_tokens,
        price_per_million_usd=price_per_million_usd,
    )


# -- benchmark runner ----------------------------------------------------------


@dataclass
class RunConfig:
    work_dir: Path
    params: HybridParams = field(default_factory=HybridParams)
    budget: int = DEFAULT_BUDGET
    n_rounds: int = 1
    max_workers: int = 4
    price_per_million_usd: float = 0.8
    full_context_mean_tokens: float = 26031.0
    embedding_dimension: int = DEFAULT_EMBEDDING_DIM
    answer_model: str | None = None
    judge_model: str | None = None
    resume: bool = True


def _store_dir(work_dir: Path, conversation_id: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", conversation_id)
    tag = hashlib.sha256(conversation_id.encode("utf-8")).hexdigest()[:8]
    return work_dir / "stores" / f"{safe}-{tag}"


def _load_checkpoint(path: Path) -> dict[tuple[int, int], EvalRecord]:
    records: dict[tuple[int, int], EvalRecord] = {}
    if not path.exists():
        return records
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            record = EvalRecord.from_dict(json.loads(line))
        except (ValueError, KeyError):
            continue  # torn tail from an interrupted run
        records[(record.round, record.item_index)] = record
    return records


def _evaluate_one(
    item: QAItem,
    store: MemoryStore | None,
    config: RunConfig,
    gateway: LlmGateway,
    round_number: int,
    item_index: int,
) -> EvalRecord:
    try:
        generated, context_tokens = answer_question(
            item, store, config.params, config.budget, gateway, config.answer_model
        )
    except Exception as exc:
        return EvalRecord(
            item=item,
            generated_answer="",
            label="WRONG",
            judge_explanation="",
            context_tokens=0,
            round=round_number,
            item_index=item_index,
            error=f"answer failed: {exc}",
        )
    try:
        label, explanation = judge_answer(item, generated, gateway, config.judge_model)
        error = None
    except Exception as exc:
        label, explanation, error = "WRONG", "", f"judge failed: {exc}"
    return EvalRecord(
        item=item,
        generated_answer=generated,
        label=label,
        judge_explanation=explanation,
        context_tokens=context_tokens,
        round=round_number,
        item_index=item_index,
        error=error,
    )


def _aggregate(records: list[EvalRecord], config: RunConfig) -> dict:
    rounds = sorted({r.round for r in records})
    categories = sorted({r.item.category for r in records})
    by_round_category: dict[int, dict[int, list[EvalRecord]]] = {
        rnd: {c: [] for c in categories} for rnd in rounds
    }
    for record in records:
        by_round_category[record.round][record.item.category].append(record)

    category_block: dict[str, dict] = {}
    per_round_overall: list[float] = []
    counts = {c: len(by_round_category[rounds[0]][c]) for c in categories}
    per_round_cat_acc: dict[int, dict[int, float]] = {}
    for rnd in rounds:
        acc: dict[int, float] = {}
        for category in categories:
            group = by_round_category[rnd][category]
            correct = sum(1 for r in group if r.label == "CORRECT")
            acc[category] = 100.0 * correct / len(group) if group else 0.0
        per_round_cat_acc[rnd] = acc
        per_round_overall.append(weighted_overall(acc, counts))

    for category in categories:
        series = [per_round_cat_acc[rnd][category] for rnd in rounds]
        category_block[str(category)] = {
            "label": CATEGORY_LABELS[category],
            "n": counts[category],
            "accuracy_mean": statistics.fmean(series),
            "accuracy_std": statistics.pstdev(series) if len(series) > 1 else 0.0,
            "accuracy_by_round": series,
        }

    cost = cost_report(
        [r.context_tokens for r in records],
        config.price_per_million_usd,
        config.full_context_mean_tokens,
    )
    return {
        "n_rounds": len(rounds),
        "n_items": len({r.item_index for r in records}),
        "token_counter": TOKEN_COUNTER_NAME,
        "categories": category_block,
        "overall": {
            "mean": statistics.fmean(per_round_overall),
            "std": statistics.pstdev(per_round_overall) if len(per_round_overall) > 1 else 0.0,
            "by_round": per_round_overall,
        },
        "cost": {
            "mean_added_tokens": cost.mean_added_tokens,
            "context_cost_usd": cost.context_cost_usd,
            "footprint_percent": cost.footprint_percent,
            "price_per_million_usd": cost.price_per_million_usd,
            "full_context_mean_tokens": config.full_context_mean_tokens,
        },
        "flagged_errors": sum(1 for r in records if r.error),
    }


def run_benchmark(dataset: LocomoDataset, config: RunConfig, gateway: LlmGateway) -> dict:
    """Phase 1 augments every conversation into its own store; phase 2 answers
    and judges every non-adversarial item, checkpointing each judged record.
    Returns the report dict; writes report.json and records.jsonl."""
    work_dir = Path(config.work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = work_dir / "checkpoint.jsonl"

    filtered = filter_eval_set(dataset.qa)
    if not filtered:
        raise EmptyInput("no evaluable items after filtering")
    done = _load_checkpoint(checkpoint_path) if config.resume else {}
    pending = [
        (rnd, idx)
        for rnd in range(1, config.n_rounds + 1)
        for idx in range(len(filtered))
        if (rnd, idx) not in done
    ]

    if pending:
        logger.info(
            "augmenting %d conversations; %d of %d judged items to go",
            len(dataset.conversations),
            len(pending),
            config.n_rounds * len(filtered),
        )
        for conversation in dataset.conversations:
            store_dir = _store_dir(work_dir, conversation.conversation_id)
            with MemoryStore.open(
                store_dir, "read_write", embedding_dimension=config.embedding_dimension
            ) as store:
                for session in conversation.sessions:
                    augment_session(session, gateway, store)

        stores: dict[str, MemoryStore | None] = {}
        try:
            for conversation in dataset.conversations:
                store_dir = _store_dir(work_dir, conversation.conversation_id)
                stores[conversation.conversation_id] = MemoryStore.open(store_dir, "read")

            checkpoint_lock = threading.Lock()

            def work(task: tuple[int, int]) -> EvalRecord:
                rnd, idx = task
                item = filtered[idx]
                record = _evaluate_one(
                    item, stores.get(item.conversation_id), config, gateway, rnd, idx
                )
                with checkpoint_lock:
                    with checkpoint_path.open("a", encoding="utf-8") as handle:
                        handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
                return record

            if config.max_workers > 1:
                with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
                    new_records = list(pool.map(work, pending))
            else:
                new_records = [work(task) for task in pending]
            for record in new_records:
                done[(record.round, record.item_index)] = record
        finally:
            for store in stores.values():
                if store is not None:
                    store.close()

    records = [
        done[key]
        for key in sorted(done)
        if key[0] <= config.n_rounds and key[1] < len(filtered)
    ]
    report = _aggregate(records, config)

    records_path = work_dir / "records.jsonl"
    with records_path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    report_path = work_dir / "report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return report
