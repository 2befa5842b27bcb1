from __future__ import annotations

import hashlib
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memlayer import (
    RetrievalEntry,
    RetrievalResult,
    count_tokens,
    render_answer_prompt,
    render_memory_block,
)
from memlayer.context import MIN_BUDGET, answer_prompt_template
from memlayer.errors import BudgetTooSmall, EmptyQuestion

from helpers import TS, make_summary, make_triple

# Frozen checksum of the shipped answer template resource.
ANSWER_TEMPLATE_SHA256 = "114e412f49a9f706d8696beb7af90a0e49afa7f71821c02a74bd5e3e930046a2"


def test_count_tokens_examples():
    assert count_tokens("") == 0
    assert count_tokens("x" * 8) == 2
    assert count_tokens("x" * 9) == 3


def _result(triples, summaries=()):
    entries = tuple(
        RetrievalEntry(triple_id=t.id, lexical_score=0.0, dense_score=0.0, fused_score=1.0 / (i + 1))
        for i, t in enumerate(triples)
    )
    return RetrievalResult(entries=entries, summaries=tuple(summaries)), {t.id: t for t in triples}


def test_empty_result_renders_headers_only():
    result, triples = _result([])
    block = render_memory_block(result, budget=64, triples=triples)
    assert block.rendered_text == "MEMORIES\nSUMMARIES"
    assert block.included_triples == ()
    assert block.included_summaries == ()
    # header skeleton is 18 characters -> ceil(18/4) = 5 tokens
    assert block.stats.context_tokens == 5


def test_budget_below_first_item_admits_nothing():
    # one rendered line of ~190 chars costs ~52 tokens, above the 32 minimum
    long_object = "a golden retriever from the municipal animal shelter " * 3
    triple = make_triple("Alice", "adopted", long_object.strip())
    result, triples = _result([triple])
    block = render_memory_block(result, budget=MIN_BUDGET, triples=triples)
    assert block.included_triples == ()
    assert block.rendered_text == "MEMORIES\nSUMMARIES"


def test_known_lengths_admit_exactly_two_of_three():
    spec = [
        ("Alice", "adopted", "a golden retriever from the shelter"),
        ("Bobby", "visited", "the old lighthouse on the north coast"),
        ("Carol", "started", "a pottery class every other Tuesday"),
    ]
    triples = [
        make_triple(s, p, o, source_message_index=i) for i, (s, p, o) in enumerate(spec)
    ]
    lines = [f"[{TS}] {s} {p} {o}" for s, p, o in spec]
    # hand-computed: text with k lines is "MEMORIES\n" + lines + "\nSUMMARIES",
    # 18 + sum(1 + len(line)) characters, tokens = ceil(chars / 4)
    chars_2 = 18 + sum(1 + len(line) for line in lines[:2])
    chars_3 = 18 + sum(1 + len(line) for line in lines[:3])
    budget = math.ceil(chars_2 / 4)
    assert budget >= MIN_BUDGET
    assert math.ceil(chars_3 / 4) > budget

    result, by_id = _result(triples)
    block = render_memory_block(result, budget=budget, triples=by_id)
    assert list(block.included_triples) == [triples[0].id, triples[1].id]
    assert block.stats.context_tokens == budget


def test_summaries_admitted_after_triples():
    triple = make_triple("Alice", "adopted", "a dog")
    summary = make_summary(text="Alice talked about her new dog at length.")
    result, triples = _result([triple], [summary])
    block = render_memory_block(result, budget=256, triples=triples)
    memories_section, summaries_section = block.rendered_text.split("\nSUMMARIES")
    assert f"[{triple.timestamp}] Alice adopted a dog" in memories_section
    assert f"[{summary.timestamp}] {summary.text}" in summaries_section
    assert block.included_summaries == ((summary.conversation_id, summary.session_id),)


def test_each_included_item_renders_exactly_once():
    triples = [make_triple("S", "p", f"object {i}", source_message_index=i) for i in range(4)]
    result, by_id = _result(triples)
    block = render_memory_block(result, budget=512, triples=by_id)
    body = block.rendered_text.split("MEMORIES\n", 1)[1].split("\nSUMMARIES", 1)[0]
    assert len(body.splitlines()) == len(block.included_triples) == 4


def test_budget_too_small_rejected():
    result, triples = _result([])
    with pytest.raises(BudgetTooSmall):
        render_memory_block(result, budget=MIN_BUDGET - 1, triples=triples)


def test_counter_is_pluggable():
    triple = make_triple("Alice", "adopted", "a dog")
    result, triples = _result([triple])

    def word_counter(text: str) -> int:
        return len(text.split())

    block = render_memory_block(result, budget=64, triples=triples, counter=word_counter)
    assert block.stats.context_tokens == word_counter(block.rendered_text)
    assert block.included_triples == (triple.id,)


# -- property tests ---------------------------------------------------------------


@st.composite
def retrieval_results(draw):
    n_triples = draw(st.integers(0, 12))
    words = st.text(alphabet="abcdefghij", min_size=1, max_size=12)
    triples = [
        make_triple(
            draw(words),
            draw(words),
            " ".join(draw(st.lists(words, min_size=1, max_size=8))),
            source_message_index=i,
            embed=False,
        )
        for i in range(n_triples)
    ]
    n_summaries = draw(st.integers(0, 4))
    summaries = [
        make_summary(
            session_id=f"s{i}",
            text=" ".join(draw(st.lists(words, min_size=1, max_size=20))),
        )
        for i in range(n_summaries)
    ]
    return _result(triples, summaries)


@settings(max_examples=120, deadline=None)
@given(data=retrieval_results(), budget=st.integers(MIN_BUDGET, 4096))
def test_budget_law_and_greedy_prefix(data, budget):
    result, triples = data
    block = render_memory_block(result, budget=budget, triples=triples)
    assert block.stats.context_tokens <= budget
    assert count_tokens(block.rendered_text) == block.stats.context_tokens
    ranked = [e.triple_id for e in result.entries]
    assert list(block.included_triples) == ranked[: len(block.included_triples)]
    summary_keys = [(s.conversation_id, s.session_id) for s in result.summaries]
    assert list(block.included_summaries) == summary_keys[: len(block.included_summaries)]
    if block.included_summaries:
        # summaries only start once every ranked triple has been admitted
        assert len(block.included_triples) == len(ranked)


@settings(max_examples=60, deadline=None)
@given(data=retrieval_results(), budget=st.integers(MIN_BUDGET, 2048), bump=st.integers(0, 2048))
def test_budget_monotonicity(data, budget, bump):
    result, triples = data
    small = render_memory_block(result, budget=budget, triples=triples)
    large = render_memory_block(result, budget=budget + bump, triples=triples)
    assert set(small.included_triples) <= set(large.included_triples)
    assert set(small.included_summaries) <= set(large.included_summaries)


# -- answer prompt -------------------------------------------------------------------


def test_answer_template_checksum_is_frozen():
    template = answer_prompt_template()
    assert hashlib.sha256(template.encode("utf-8")).hexdigest() == ANSWER_TEMPLATE_SHA256
    assert "{{memories}}" in template
    assert "{{question}}" in template


def test_rendered_prompt_contains_instructions_section_verbatim():
    result, triples = _result([make_triple("Alice", "lives in", "Lisbon")])
    block = render_memory_block(result, budget=128, triples=triples)
    prompt = render_answer_prompt(block, "Where does Alice live?")
    assert "    # INSTRUCTIONS:" in prompt
    assert "{{" not in prompt
    assert block.rendered_text in prompt
    assert "Question: Where does Alice live?" in prompt


def test_rendering_is_byte_exact_substitution():
    result, triples = _result([make_triple("Alice", "lives in", "Lisbon")])
    block = render_memory_block(result, budget=128, triples=triples)
    question = "Where does Alice live?"
    expected = (
        answer_prompt_template()
        .replace("{{memories}}", block.rendered_text)
        .replace("{{question}}", question)
    )
    assert render_answer_prompt(block, question) == expected
    assert render_answer_prompt(block, question) == render_answer_prompt(block, question)


def test_empty_question_rejected():
    result, triples = _result([])
    block = render_memory_block(result, budget=64, triples=triples)
    with pytest.raises(EmptyQuestion):
        render_answer_prompt(block, "   ")
