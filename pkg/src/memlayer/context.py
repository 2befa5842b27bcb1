"""Token-budgeted memory block rendering and the answer prompt.

The budget is a hard cap on tokens the memory layer may add to a prompt.
Admission is greedy in retrieval order, triples before summaries, and never
truncates mid-item, so the included set is always a prefix of the ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Mapping

from .errors import BudgetTooSmall, EmptyQuestion
from .model import RetrievalResult, TokenStats, Triple

MIN_BUDGET = 32
DEFAULT_BUDGET = 2048
MEMORIES_HEADER = "MEMORIES"
SUMMARIES_HEADER = "SUMMARIES"

# Named so reports can state which counter produced their numbers.
TOKEN_COUNTER_NAME = "approx-chars/4"

TokenCounter = Callable[[str], int]


def count_tokens(text: str) -> int:
    """Approximate token count: ceil(characters / 4). Pluggable where an exact
    model tokenizer matters; every report names the counter used."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ContextBlock:
    rendered_text: str
    included_triples: tuple[str, ...]
    included_summaries: tuple[tuple[str, str], ...]
    stats: TokenStats


def _assemble(triple_lines: list[str], summary_lines: list[str]) -> str:
    return "\n".join([MEMORIES_HEADER, *triple_lines, SUMMARIES_HEADER, *summary_lines])


def render_memory_block(
    result: RetrievalResult,
    budget: int = DEFAULT_BUDGET,
    triples: Mapping[str, Triple] | None = None,
    counter: TokenCounter = count_tokens,
) -> ContextBlock:
    """Render "MEMORIES" then "SUMMARIES" sections within the token budget.

    Memory lines are "[timestamp] subject predicate object"; summary lines are
    "[timestamp] text". A single greedy pass admits triples in result order and
    then summaries, stopping outright at the first item that would push the
    running token count past the budget; that stop-at-first-failure rule is
    what makes a larger budget admit a superset of items.
    """
    if budget < MIN_BUDGET:
        raise BudgetTooSmall(f"budget {budget} is below the minimum {MIN_BUDGET}")
    triples = triples or {}

    triple_lines: list[str] = []
    included_triples: list[str] = []
    summary_lines: list[str] = []
    included_summaries: list[tuple[str, str]] = []

    queue: list[tuple[str, object]] = [("triple", e) for e in result.entries]
    queue += [("summary", s) for s in result.summaries]
    for kind, item in queue:
        if kind == "triple":
            triple = triples[item.triple_id]
            line = f"[{triple.timestamp}] {triple.subject} {triple.predicate} {triple.object}"
            candidate = _assemble(triple_lines + [line], summary_lines)
        else:
            line = f"[{item.timestamp}] {item.text}"
            candidate = _assemble(triple_lines, summary_lines + [line])
        if counter(candidate) > budget:
            break
        if kind == "triple":
            triple_lines.append(line)
            included_triples.append(item.triple_id)
        else:
            summary_lines.append(line)
            included_summaries.append((item.conversation_id, item.session_id))

    rendered = _assemble(triple_lines, summary_lines)
    stats = TokenStats(context_tokens=counter(rendered), question_tokens=0, budget=budget)
    return ContextBlock(
        rendered_text=rendered,
        included_triples=tuple(included_triples),
        included_summaries=tuple(included_summaries),
        stats=stats,
    )


def _load_template(name: str) -> str:
    return resources.files("memlayer.prompts").joinpath(name).read_text(encoding="utf-8")


def answer_prompt_template() -> str:
    return _load_template("answer.txt")


def render_answer_prompt(block: ContextBlock, question: str) -> str:
    """Substitute the memory block and question into the answer template."""
    if not question.strip():
        raise EmptyQuestion("question must be non-empty")
    template = answer_prompt_template()
    return template.replace("{{memories}}", block.rendered_text).replace("{{question}}", question)
