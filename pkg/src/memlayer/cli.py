"""Operator surface: ingest transcripts, ask questions, inspect memory, run
benchmarks, print store stats.

Exit codes: 0 success, 1 operational failure, 2 usage error. Every command
accepts --json and then emits exactly one JSON document on success. Config
precedence is flags > environment > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .augmentation import augment_session
from .context import (
    DEFAULT_BUDGET,
    count_tokens,
    render_answer_prompt,
    render_memory_block,
)
from .errors import MemlayerError
from .gateway import BackendConfig, LlmGateway
from .harness import (
    RunConfig,
    load_locomo,
    parse_locomo,
    run_benchmark,
)
from .index import HybridParams
from .model import DEFAULT_EMBEDDING_DIM
from .store import MemoryStore

KNOB_DEFAULTS = {
    "budget": DEFAULT_BUDGET,
    "k1": 1.2,
    "b": 0.75,
    "rrf_k": 60,
    "top_k_per_channel": 30,
    "final_k": 10,
    "price": 0.8,
    "full_context_tokens": 26031.0,
    "rounds": 1,
    "embed_dim": DEFAULT_EMBEDDING_DIM,
}


def _shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--store", help="store directory (eval: working directory)")
    parser.add_argument("--config", help="JSON config file; flags and env override it")
    parser.add_argument("--scripted", action="store_true", default=None,
                        help="use the offline scripted backend")
    parser.add_argument("--fixtures", help="scripted fixtures JSONL (with --scripted)")
    parser.add_argument("--base-url", dest="base_url", help="live backend base URL")
    parser.add_argument("--chat-model", dest="chat_model", help="live chat model name")
    parser.add_argument("--embed-model", dest="embed_model", help="live embedding model name")
    parser.add_argument("--json", action="store_true", help="emit one JSON document")
    parser.add_argument("--budget", type=int, help="memory block token budget")
    parser.add_argument("--rrf-k", dest="rrf_k", type=int, help="rank fusion constant")
    parser.add_argument("--k1", type=float, help="BM25 k1")
    parser.add_argument("--b", type=float, help="BM25 b")
    parser.add_argument("--final-k", dest="final_k", type=int, help="results returned per query")
    parser.add_argument("--top-k-per-channel", dest="top_k_per_channel", type=int,
                        help="candidates taken from each channel")
    parser.add_argument("--price", type=float, help="USD per 1M tokens for cost reporting")
    parser.add_argument("--full-context-tokens", dest="full_context_tokens", type=float,
                        help="full-context token mean for footprint reporting")
    parser.add_argument("--rounds", type=int, help="evaluation rounds")
    parser.add_argument("--embed-dim", dest="embed_dim", type=int,
                        help="embedding dimension for new stores")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memlayer", description=__doc__)
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("ingest", help="augment transcript sessions into the store")
    p.add_argument("transcript_file")
    _shared_flags(p)

    p = subparsers.add_parser("ask", help="answer a question from memory")
    p.add_argument("question")
    p.add_argument("--show-context", action="store_true", help="print the memory block and token stats")
    _shared_flags(p)

    p = subparsers.add_parser("query", help="show the hybrid ranking for a query")
    p.add_argument("query")
    _shared_flags(p)

    p = subparsers.add_parser("eval", help="run the benchmark over a dataset file")
    p.add_argument("dataset")
    _shared_flags(p)

    p = subparsers.add_parser("stats", help="print store and index statistics")
    _shared_flags(p)

    return parser


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise MemlayerError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise MemlayerError(f"config file {path} must hold a JSON object")
    return raw


def _resolve(args: argparse.Namespace, file_config: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_config:
        return file_config[key]
    return KNOB_DEFAULTS.get(key)


def _resolve_params(args: argparse.Namespace, file_config: dict) -> HybridParams:
    return HybridParams(
        k1=_resolve(args, file_config, "k1"),
        b=_resolve(args, file_config, "b"),
        rrf_k=_resolve(args, file_config, "rrf_k"),
        top_k_per_channel=_resolve(args, file_config, "top_k_per_channel"),
        final_k=_resolve(args, file_config, "final_k"),
    )


def _scripted_requested(args: argparse.Namespace, file_config: dict) -> bool:
    if args.scripted is not None:
        return args.scripted
    return bool(file_config.get("scripted", False))


def _validate_usage(args: argparse.Namespace, file_config: dict, parser_error) -> None:
    scripted = _scripted_requested(args, file_config)
    live_flags = [name for name in ("base_url", "chat_model", "embed_model") if getattr(args, name)]
    if scripted and live_flags:
        parser_error(f"--scripted conflicts with live backend flags: {', '.join(live_flags)}")
    if args.fixtures and not scripted:
        parser_error("--fixtures requires --scripted")


_BACKEND_ENV = {
    "base_url": "MEMLAYER_BASE_URL",
    "chat_model": "MEMLAYER_CHAT_MODEL",
    "embed_model": "MEMLAYER_EMBED_MODEL",
}


def _build_gateway(args: argparse.Namespace, file_config: dict, parser_error, dim: int) -> LlmGateway:
    if _scripted_requested(args, file_config):
        fixtures = args.fixtures or file_config.get("fixtures")
        return LlmGateway.scripted(fixtures, dim=dim)
    # precedence: flags > environment > config file > built-in defaults
    overrides = {}
    for name, env_key in _BACKEND_ENV.items():
        flag = getattr(args, name)
        if flag:
            overrides[name] = flag
        elif env_key not in os.environ and file_config.get(name):
            overrides[name] = file_config[name]
    config = BackendConfig.from_env(**overrides)
    return LlmGateway.from_config(config)


def _store_path(args: argparse.Namespace, file_config: dict, parser_error) -> Path:
    store = args.store or file_config.get("store")
    if not store:
        parser_error("--store is required")
    return Path(store)


def _print_json(document: dict) -> None:
    print(json.dumps(document, sort_keys=True))


# -- commands ------------------------------------------------------------------


def cmd_ingest(args, file_config, parser_error) -> int:
    store_path = _store_path(args, file_config, parser_error)
    raw_text = Path(args.transcript_file).read_text(encoding="utf-8")
    try:
        raw = json.loads(raw_text)
    except ValueError as exc:
        raise MemlayerError(f"SchemaError: {args.transcript_file}: not valid JSON: {exc}") from exc
    if isinstance(raw, dict) and "conversation_id" in raw and "conversations" not in raw:
        raw = {"conversations": [raw]}
    dataset = parse_locomo(raw)

    dim = _resolve(args, file_config, "embed_dim")
    with MemoryStore.open(store_path, "read_write", embedding_dimension=dim) as store:
        gateway = _build_gateway(args, file_config, parser_error, store.embedding_dimension)
        sessions = 0
        new_triples = 0
        new_summaries = 0
        for conversation in dataset.conversations:
            for session in conversation.sessions:
                n, wrote = augment_session(session, gateway, store)
                sessions += 1
                new_triples += n
                new_summaries += int(wrote)
    if args.json:
        _print_json({"sessions": sessions, "triples": new_triples, "summaries": new_summaries})
    else:
        print(f"{sessions} sessions, {new_triples} triples, {new_summaries} summaries")
    return 0


def cmd_ask(args, file_config, parser_error) -> int:
    store_path = _store_path(args, file_config, parser_error)
    params = _resolve_params(args, file_config)
    budget = _resolve(args, file_config, "budget")
    with MemoryStore.open(store_path, "read") as store:
        gateway = _build_gateway(args, file_config, parser_error, store.embedding_dimension)
        if not store.all_triples():
            print("warning: store holds no triples; answering from empty context", file=sys.stderr)
        result = store.search(args.question, params, gateway.embed_text)
        triples = {t.id: t for t in store.all_triples()}
        block = render_memory_block(result, budget, triples)
        prompt = render_answer_prompt(block, args.question)
        answer = gateway.complete_text(prompt)
    question_tokens = count_tokens(args.question)
    if args.json:
        document = {
            "answer": answer,
            "context_tokens": block.stats.context_tokens,
            "question_tokens": question_tokens,
            "budget": block.stats.budget,
        }
        if args.show_context:
            document["context"] = block.rendered_text
        _print_json(document)
        return 0
    if args.show_context:
        print(block.rendered_text)
        print(f"context_tokens: {block.stats.context_tokens}")
        print(f"question_tokens: {question_tokens}")
        print(f"budget: {block.stats.budget}")
    print(answer)
    return 0


def cmd_query(args, file_config, parser_error) -> int:
    store_path = _store_path(args, file_config, parser_error)
    params = _resolve_params(args, file_config)
    with MemoryStore.open(store_path, "read") as store:
        gateway = _build_gateway(args, file_config, parser_error, store.embedding_dimension)
        result = store.search(args.query, params, gateway.embed_text)
        triples = {t.id: t for t in store.all_triples()}
    if args.json:
        _print_json(
            {
                "entries": [
                    {
                        "triple_id": e.triple_id,
                        "subject": triples[e.triple_id].subject,
                        "predicate": triples[e.triple_id].predicate,
                        "object": triples[e.triple_id].object,
                        "lexical_score": e.lexical_score,
                        "dense_score": e.dense_score,
                        "fused_score": e.fused_score,
                        "lexical_rank": e.lexical_rank,
                        "dense_rank": e.dense_rank,
                    }
                    for e in result.entries
                ],
                "summaries": [
                    {
                        "conversation_id": s.conversation_id,
                        "session_id": s.session_id,
                        "text": s.text,
                        "timestamp": s.timestamp,
                    }
                    for s in result.summaries
                ],
            }
        )
        return 0
    print(f"{'#':>2}  {'lex#':>4} {'lex':>8} {'dns#':>4} {'dense':>8} {'fused':>8}  fact")
    for rank, entry in enumerate(result.entries, start=1):
        triple = triples[entry.triple_id]
        lex = str(entry.lexical_rank) if entry.lexical_rank is not None else "—"
        dns = str(entry.dense_rank) if entry.dense_rank is not None else "—"
        print(
            f"{rank:>2}  {lex:>4} {entry.lexical_score:>8.4f} {dns:>4} "
            f"{entry.dense_score:>8.4f} {entry.fused_score:>8.5f}  "
            f"[{triple.timestamp}] {triple.subject} {triple.predicate} {triple.object}"
        )
    if result.summaries:
        print("linked summaries:")
        for summary in result.summaries:
            print(f"  [{summary.timestamp}] ({summary.conversation_id}/{summary.session_id}) {summary.text}")
    return 0


def cmd_eval(args, file_config, parser_error) -> int:
    work_dir = _store_path(args, file_config, parser_error)
    dataset = load_locomo(args.dataset)
    config = RunConfig(
        work_dir=work_dir,
        params=_resolve_params(args, file_config),
        budget=_resolve(args, file_config, "budget"),
        n_rounds=_resolve(args, file_config, "rounds"),
        price_per_million_usd=_resolve(args, file_config, "price"),
        full_context_mean_tokens=_resolve(args, file_config, "full_context_tokens"),
        embedding_dimension=_resolve(args, file_config, "embed_dim"),
    )
    gateway = _build_gateway(args, file_config, parser_error, config.embedding_dimension)
    report = run_benchmark(dataset, config, gateway)
    if args.json:
        _print_json(report)
        return 0
    print(f"rounds: {report['n_rounds']}  items: {report['n_items']}  token counter: {report['token_counter']}")
    for key in sorted(report["categories"], key=int):
        block = report["categories"][key]
        print(
            f"  {block['label']:<12} n={block['n']:<5} "
            f"accuracy {block['accuracy_mean']:.2f}% (std {block['accuracy_std']:.2f})"
        )
    print(f"overall: {report['overall']['mean']:.2f}% (std {report['overall']['std']:.2f})")
    cost = report["cost"]
    print(
        f"mean added tokens: {cost['mean_added_tokens']:.1f}  "
        f"context cost: ${cost['context_cost_usd']:.6f}  "
        f"footprint: {cost['footprint_percent']:.2f}%"
    )
    print(f"report: {work_dir / 'report.json'}  records: {work_dir / 'records.jsonl'}")
    return 0


def cmd_stats(args, file_config, parser_error) -> int:
    store_path = _store_path(args, file_config, parser_error)
    with MemoryStore.open(store_path, "read") as store:
        manifest = store.manifest
        lexical = store.lexical_index
        document = {
            "format_version": manifest.format_version,
            "embedding_dimension": manifest.embedding_dimension,
            "n_triples": manifest.n_triples,
            "n_summaries": manifest.n_summaries,
            "index_docs": lexical.n_docs,
            "vocabulary": len(lexical.postings),
            "avgdl": lexical.avgdl,
        }
    if args.json:
        _print_json(document)
    else:
        for key, value in document.items():
            print(f"{key}: {value}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "ask": cmd_ask,
    "query": cmd_query,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_config = _load_config_file(args.config)
        _validate_usage(args, file_config, parser.error)
        return COMMANDS[args.command](args, file_config, parser.error)
    except MemlayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
