"""Shared builders for tests: triples, summaries, transcripts, scripted
fixture maps, and the synthetic scripted benchmark corpus."""

from __future__ import annotations

import dataclasses
import json

from memlayer import (
    ChatMessage,
    HybridParams,
    LlmGateway,
    MemoryStore,
    SessionTranscript,
    Summary,
    Turn,
    augment_session,
    deterministic_embed,
    prompt_hash,
    triple_doc_text,
    validate_triple,
)
from memlayer.augmentation import render_extraction_prompt, render_summary_prompt
from memlayer.context import render_answer_prompt, render_memory_block
from memlayer.harness import QAItem, render_judge_prompt

TS = "2023-05-02T10:00:00Z"


def make_triple(
    subject: str,
    predicate: str,
    object: str,
    conversation_id: str = "conv-1",
    session_id: str = "sess-1",
    source_message_index: int = 0,
    timestamp: str = TS,
    dim: int = 128,
    embed: bool = True,
):
    triple = validate_triple(
        subject=subject,
        predicate=predicate,
        object=object,
        conversation_id=conversation_id,
        session_id=session_id,
        source_message_index=source_message_index,
        timestamp=timestamp,
    )
    if embed:
        triple = dataclasses.replace(
            triple, embedding=deterministic_embed(triple_doc_text(triple), dim)
        )
    return triple


def make_summary(
    conversation_id: str = "conv-1",
    session_id: str = "sess-1",
    text: str = "A session summary.",
    timestamp: str = TS,
) -> Summary:
    return Summary(
        conversation_id=conversation_id, session_id=session_id, text=text, timestamp=timestamp
    )


def make_transcript(
    conversation_id: str = "conv-1",
    session_id: str = "sess-1",
    timestamp: str = TS,
    turns: list[tuple[str, str]] | None = None,
) -> SessionTranscript:
    turns = turns or [("Alice", "I adopted a golden retriever last week.")]
    return SessionTranscript(
        conversation_id=conversation_id,
        session_id=session_id,
        timestamp=timestamp,
        turns=tuple(Turn(s, t) for s, t in turns),
    )


class FixtureMap:
    """Accumulates scripted prompt -> completion pairs keyed the way the
    scripted backend resolves them."""

    def __init__(self):
        self.fixtures: dict[str, str] = {}

    def add_prompt(self, prompt: str, completion: str) -> "FixtureMap":
        self.fixtures[prompt_hash((ChatMessage("user", prompt),))] = completion
        return self

    def add_messages(self, messages, completion: str) -> "FixtureMap":
        self.fixtures[prompt_hash(tuple(messages))] = completion
        return self

    def add_extraction(self, transcript: SessionTranscript, completion: str) -> "FixtureMap":
        return self.add_prompt(render_extraction_prompt(transcript), completion)

    def add_summary(self, transcript: SessionTranscript, completion: str) -> "FixtureMap":
        return self.add_prompt(render_summary_prompt(transcript), completion)

    def gateway(self, dim: int = 128) -> LlmGateway:
        return LlmGateway.scripted(dict(self.fixtures), dim=dim)


# -- synthetic scripted benchmark ------------------------------------------------

PLANTED_FACTS = {
    ("conv-ana", "s1", "2023-03-04T10:00:00Z"): [
        ("Ana", "adopted", "a golden retriever puppy"),
        ("Ana", "works at", "the harbor observatory"),
    ],
    ("conv-ana", "s2", "2023-04-11T18:30:00Z"): [
        ("Ana", "visited", "the basalt caves"),
        ("Ana", "plays", "the mandolin"),
    ],
    ("conv-ben", "s1", "2023-02-20T09:15:00Z"): [
        ("Ben", "moved to", "a lakeside cottage"),
        ("Ben", "collects", "antique barometers"),
    ],
    ("conv-ben", "s2", "2023-05-07T14:00:00Z"): [
        ("Ben", "trains for", "a marathon in autumn"),
        ("Ben", "bakes", "sourdough every sunday"),
    ],
    ("conv-cara", "s1", "2023-01-16T11:45:00Z"): [
        ("Cara", "studies", "marine bioluminescence"),
        ("Cara", "keeps", "a flock of quail"),
    ],
    ("conv-cara", "s2", "2023-06-02T16:20:00Z"): [
        ("Cara", "repairs", "vintage typewriters"),
        ("Cara", "grows", "heirloom tomatoes"),
    ],
}


def build_synthetic_benchmark(scratch_dir, n_questions: int | None = None, wrong_every: int = 5):
    """Scripted 3-conversation corpus with 12 planted facts and one question
    per fact.

    Returns (dataset_dict, fixture_map, planted) where planted maps each
    question to the id of the triple it targets. Every wrong_every-th question
    gets a deliberately wrong scripted answer (judged WRONG) so accuracy math
    has something to chew on.
    """
    fixtures = FixtureMap()
    conversations: dict[str, list[dict]] = {}
    transcripts = {}
    facts = []
    for (conv_id, session_id, timestamp), session_facts in PLANTED_FACTS.items():
        turns = [
            (subject, f"I {predicate} {object}.")
            for subject, predicate, object in session_facts
        ]
        turns.append(("Friend", "That sounds lovely, tell me more sometime."))
        transcript = make_transcript(conv_id, session_id, timestamp, turns)
        transcripts[(conv_id, session_id)] = transcript
        fixtures.add_extraction(
            transcript,
            json.dumps(
                [[s, p, o, i] for i, (s, p, o) in enumerate(session_facts)]
            ),
        )
        fixtures.add_summary(
            transcript,
            f"{session_facts[0][0]} shared personal updates in this session.",
        )
        conversations.setdefault(conv_id, []).append(
            {
                "session_id": session_id,
                "timestamp": timestamp,
                "turns": [{"speaker": s, "text": t} for s, t in turns],
            }
        )
        for i, (subject, predicate, object) in enumerate(session_facts):
            facts.append((conv_id, session_id, timestamp, i, subject, predicate, object))

    if n_questions is not None:
        facts = facts[:n_questions]

    qa = []
    for number, (conv_id, _, _, _, subject, predicate, object) in enumerate(facts):
        question = f"Who {predicate} {object}?"
        qa.append(
            {
                "question": question,
                "answer": subject,
                "category": (number % 4) + 1,
                "conversation_id": conv_id,
            }
        )
    dataset = {
        "conversations": [
            {"conversation_id": conv_id, "sessions": sessions}
            for conv_id, sessions in conversations.items()
        ],
        "qa": qa,
    }

    # Materialize per-conversation stores once to precompute the exact answer
    # prompts the benchmark will render, then script answers and judgments.
    params = HybridParams()
    gateway = fixtures.gateway()
    planted = {}
    stores = {}
    for conv_id in conversations:
        store = MemoryStore.open(scratch_dir / f"fixture-{conv_id}", "read_write")
        for session in sorted({k[1] for k in transcripts if k[0] == conv_id}):
            augment_session(transcripts[(conv_id, session)], gateway, store)
        stores[conv_id] = store

    for number, (conv_id, session_id, timestamp, turn, subject, predicate, object) in enumerate(facts):
        question = f"Who {predicate} {object}?"
        store = stores[conv_id]
        result = store.search(question, params, gateway.embed_text)
        triples = {t.id: t for t in store.all_triples()}
        block = render_memory_block(result, triples=triples)
        prompt = render_answer_prompt(block, question)
        answer = "nobody I know" if wrong_every and number % wrong_every == wrong_every - 1 else subject
        fixtures.add_prompt(prompt, answer)
        item = QAItem(question=question, gold_answer=subject, category=(number % 4) + 1, conversation_id=conv_id)
        label = "WRONG" if answer != subject else "CORRECT"
        fixtures.add_prompt(
            render_judge_prompt(item.question, item.gold_answer, answer),
            f'The generated answer names the right person. {{"label": "{label}"}}'
            if label == "CORRECT"
            else f'The generated answer names the wrong person. {{"label": "{label}"}}',
        )
        target = [
            t.id
            for t in store.all_triples()
            if (t.subject, t.predicate, t.object) == (subject, predicate, object)
        ]
        planted[question] = target[0]
    for store in stores.values():
        store.close()

    return dataset, fixtures, planted
