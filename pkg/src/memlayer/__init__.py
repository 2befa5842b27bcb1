"""memlayer: persistent structured memory for conversational agents.

Distills multi-session dialogue into linked semantic triples and session
summaries, retrieves them with hybrid BM25 + dense search, grounds answers
under a hard token budget, and ships a benchmark harness with judge scoring
and token/cost accounting.
"""

from . import errors
from .augmentation import (
    AugmentationJob,
    AugmentationQueue,
    augment_session,
    extract_triples,
    summarize_session,
)
from .context import (
    ContextBlock,
    count_tokens,
    render_answer_prompt,
    render_memory_block,
)
from .gateway import (
    BackendConfig,
    ChatMessage,
    ChatRequest,
    LlmGateway,
    deterministic_embed,
    prompt_hash,
)
from .harness import (
    CostReport,
    EvalRecord,
    LocomoDataset,
    QAItem,
    RunConfig,
    answer_question,
    category_counts,
    convert_locomo_release,
    cost_report,
    filter_eval_set,
    judge_answer,
    load_locomo,
    run_benchmark,
    weighted_overall,
)
from .index import (
    DenseIndex,
    HybridParams,
    LexicalIndex,
    bm25_score,
    dense_search,
    hybrid_retrieve,
    index_insert,
    index_remove,
    tokenize,
    triple_doc_text,
)
from .model import (
    RetrievalEntry,
    RetrievalResult,
    SessionTranscript,
    Summary,
    TokenStats,
    Triple,
    Turn,
    validate_triple,
)
from .store import MemoryStore, StoreManifest

__version__ = "0.1.0"

__all__ = [
    "AugmentationJob",
    "AugmentationQueue",
    "BackendConfig",
    "ChatMessage",
    "ChatRequest",
    "ContextBlock",
    "CostReport",
    "DenseIndex",
    "EvalRecord",
    "HybridParams",
    "LexicalIndex",
    "LlmGateway",
    "LocomoDataset",
    "MemoryStore",
    "QAItem",
    "RetrievalEntry",
    "RetrievalResult",
    "RunConfig",
    "SessionTranscript",
    "StoreManifest",
    "Summary",
    "TokenStats",
    "Triple",
    "Turn",
    "answer_question",
    "augment_session",
    "bm25_score",
    "category_counts",
    "convert_locomo_release",
    "cost_report",
    "count_tokens",
    "dense_search",
    "deterministic_embed",
    "errors",
    "extract_triples",
    "filter_eval_set",
    "hybrid_retrieve",
    "index_insert",
    "index_remove",
    "judge_answer",
    "load_locomo",
    "prompt_hash",
    "render_answer_prompt",
    "render_memory_block",
    "run_benchmark",
    "summarize_session",
    "tokenize",
    "triple_doc_text",
    "validate_triple",
    "weighted_overall",
]
