"""Single entry point: index building, search, pipeline runs, evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error. Every
run writes a manifest (config snapshot, input hashes, provider id) next to
its outputs; with a populated generation cache the manifest suffices to
replay the run exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .corpus import Corpus, CorpusError, load_corpus, load_queries
from .dense import (
    EmbeddingError,
    FileBackedEmbedder,
    HttpEmbedder,
    MockHashEmbedder,
    VectorIndex,
    build_vector_index,
)
from .evaluation import (
    EvalError,
    MetricReport,
    evaluate_run,
    load_qrels,
    paired_t_test,
    read_run,
    write_run,
)
from .llm import (
    CachingProvider,
    GenerationError,
    MockProvider,
    OpenAiCompatProvider,
    RateLimiter,
    ReplayProvider,
)
from .pipeline import (
    CONFIG_SCHEMA_VERSION,
    InterConfig,
    PipelineError,
    SearchIndexes,
    iter_batch,
    run_batch,
)
from .sparse import (
    INDEX_FORMAT_VERSION,
    Bm25Params,
    IndexFormatError,
    IndexOptions,
    build_index,
    load_index,
    save_index,
    sparse_search,
)
from .dense import VECTOR_FORMAT_VERSION

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Validation problem in arguments or input files (exit 2)."""


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_stopwords(path_str: str | None) -> frozenset[str]:
    if not path_str:
        return frozenset()
    path = _require_file(path_str, "stopword file")
    return frozenset(
        word.strip().lower() for word in path.read_text(encoding="utf-8").split() if word.strip()
    )


def _build_embedder(args: argparse.Namespace):
    kind = getattr(args, "embedder", None)
    if kind is None:
        return None
    if kind == "mock-hash":
        return MockHashEmbedder(dim=args.dim)
    if kind == "http":
        if args.embed_url:
            return HttpEmbedder(args.embed_url, api_key=os.environ.get("INTER_EMBED_KEY"))
        try:
            return HttpEmbedder.from_env()
        except EmbeddingError as exc:
            raise UsageError(str(exc)) from exc
    if kind == "file":
        if not args.query_vectors:
            raise UsageError("--embedder file requires --query-vectors")
        return FileBackedEmbedder.from_file(_require_file(args.query_vectors, "vector file"))
    raise UsageError(f"unknown embedder: {kind!r}")


def _add_embedder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedder", choices=["mock-hash", "http", "file"],
                        help="query/document encoder for dense retrieval")
    parser.add_argument("--dim", type=int, default=64, help="mock-hash dimensionality")
    parser.add_argument("--embed-url", help="embedding service URL (default: INTER_EMBED_URL)")
    parser.add_argument("--query-vectors", help="id-keyed vector file for --embedder file")


def cmd_index_build(args: argparse.Namespace) -> int:
    corpus_path = _require_file(args.corpus, "corpus file")
    try:
        params = Bm25Params(k1=args.k1, b=args.b)
        options = IndexOptions(params=params, stopwords=_load_stopwords(args.stopwords),
                               stem=args.stem)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        corpus = load_corpus(corpus_path, format=args.format, strict=args.strict)
    except CorpusError as exc:
        raise UsageError(str(exc)) from exc
    index = build_index(corpus, options)
    save_index(index, args.out)
    print(f"indexed {index.num_docs} documents, {len(index.vocabulary)} terms -> {args.out}")
    return EXIT_OK


def cmd_index_encode(args: argparse.Namespace) -> int:
    corpus_path = _require_file(args.corpus, "corpus file")
    try:
        corpus = load_corpus(corpus_path, format=args.format)
    except CorpusError as exc:
        raise UsageError(str(exc)) from exc
    if args.embedder == "file":
        if not args.vectors:
            raise UsageError("--embedder file requires --vectors")
        embedder = FileBackedEmbedder.from_file(_require_file(args.vectors, "vector file"))
    elif args.embedder == "mock-hash":
        embedder = MockHashEmbedder(dim=args.dim)
    else:
        embedder = HttpEmbedder(args.embed_url) if args.embed_url else HttpEmbedder.from_env()
    vindex = build_vector_index(corpus, embedder)
    vindex.save(args.out)
    print(f"encoded {vindex.num_docs} documents (dim {vindex.dim}) -> {args.out}")
    return EXIT_OK


def _load_indexes(args: argparse.Namespace, need_corpus: bool) -> SearchIndexes:
    corpus = None
    if getattr(args, "corpus", None):
        corpus_path = _require_file(args.corpus, "corpus file")
        try:
            corpus = load_corpus(corpus_path, format=args.format)
        except CorpusError as exc:
            raise UsageError(str(exc)) from exc
    elif need_corpus:
        raise UsageError("--corpus is required (refine prompts embed document texts)")
    sparse = None
    if getattr(args, "sparse_index", None):
        try:
            sparse = load_index(_require_file(args.sparse_index, "sparse index"))
        except IndexFormatError as exc:
            raise UsageError(str(exc)) from exc
    dense = None
    if getattr(args, "dense_index", None):
        try:
            dense = VectorIndex.load(_require_file(args.dense_index, "dense index"))
        except EmbeddingError as exc:
            raise UsageError(str(exc)) from exc
    return SearchIndexes(corpus=corpus, sparse=sparse, dense=dense,
                         embedder=_build_embedder(args))


def cmd_search(args: argparse.Namespace) -> int:
    queries = load_queries(_require_file(args.queries, "query file"))
    indexes = _load_indexes(args, need_corpus=False)
    try:
        config = InterConfig(M=0, final_rm=args.mode, final_k=args.k)
        indexes.validate_for(config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rankings = []
    for query in queries:
        if args.mode == "sparse" and args.include_zero:
            rankings.append(sparse_search(indexes.sparse, query.text, args.k,
                                          query.id, include_zero=True))
        else:
            outcome = run_batch([query], config, indexes, provider=None)[0]
            rankings.append(outcome.ranking)
    write_run(args.out, rankings, tag=args.tag)
    print(f"wrote {sum(len(r) for r in rankings)} entries for {len(queries)} queries -> {args.out}")
    return EXIT_OK


def _resolve_provider(args: argparse.Namespace, config: InterConfig):
    llm_cfg = dict(config.llm)
    if args.mock_llm:
        llm_cfg["provider"] = "mock"
    if args.seed is not None:
        llm_cfg["seed"] = args.seed
    provider_kind = llm_cfg.get("provider", "openai")
    if args.llm_cache_only:
        if not args.llm_cache:
            raise UsageError("--llm-cache-only requires --llm-cache")
        return ReplayProvider(args.llm_cache)
    if provider_kind == "mock":
        provider = MockProvider(seed=int(llm_cfg.get("seed", 0)))
    elif provider_kind == "openai":
        limiter = RateLimiter(args.rate_limit) if args.rate_limit else None
        if "url" in llm_cfg and "model" in llm_cfg:
            provider = OpenAiCompatProvider(
                llm_cfg["url"], os.environ.get("INTER_LLM_KEY"), llm_cfg["model"],
                supports_n=bool(llm_cfg.get("supports_n", True)), rate_limiter=limiter,
            )
        else:
            try:
                provider = OpenAiCompatProvider.from_env(rate_limiter=limiter)
            except GenerationError as exc:
                raise UsageError(str(exc)) from exc
    else:
        raise UsageError(f"unknown llm provider: {provider_kind!r}")
    if args.llm_cache:
        provider = CachingProvider(provider, args.llm_cache)
    return provider


def _run_config(args: argparse.Namespace) -> InterConfig:
    data: dict = {}
    if args.config:
        config_path = _require_file(args.config, "config file")
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: invalid JSON: {exc}") from exc
    overrides = {
        "M": args.M, "h": args.h, "k": args.k, "final_k": args.final_k,
        "intermediate_rm": args.intermediate_rm, "final_rm": args.final_rm,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    try:
        return InterConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _write_manifest(out_path: Path, args: argparse.Namespace, config: InterConfig,
                    provider_tag: str, input_paths: dict[str, str | None],
                    outputs: dict[str, str]) -> None:
    manifest = {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "tool_version": __version__,
        "config_schema_version": CONFIG_SCHEMA_VERSION,
        "config": config.to_dict(),
        "seed": args.seed,
        "provider": provider_tag,
        "inputs": {
            label: {"path": str(p), "sha256": _sha256_file(Path(p))}
            for label, p in input_paths.items() if p
        },
        "outputs": outputs,
    }
    _atomic_write_text(out_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    config = _run_config(args)
    queries = load_queries(_require_file(args.queries, "query file"))
    indexes = _load_indexes(args, need_corpus=config.M >= 2)
    try:
        indexes.validate_for(config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    provider = None
    if config.M > 0:
        provider = _resolve_provider(args, config)
    workers = args.workers or os.cpu_count() or 1

    # Trace records stream out per query so an interrupted run keeps a valid
    # prefix; the run file itself is published atomically at the end.
    rankings = []
    failures = []
    trace_handle = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        for outcome in iter_batch(queries, config, indexes, provider, workers=workers,
                                  strict=args.strict, seed=args.seed):
            if outcome.ranking is not None:
                rankings.append(outcome.ranking)
            if outcome.error:
                failures.append(outcome)
            if trace_handle is not None:
                for step in outcome.trace:
                    record = step.trace_record(outcome.query.id)
                    trace_handle.write(json.dumps(record, sort_keys=True) + "\n")
                trace_handle.flush()
    finally:
        if trace_handle is not None:
            trace_handle.close()
    write_run(args.out, rankings, tag=args.tag)
    outputs = {"run": str(args.out)}
    if args.trace:
        outputs["trace"] = str(args.trace)
    _write_manifest(
        Path(args.out).with_name(Path(args.out).name + ".manifest.json"),
        args, config, provider.tag if provider else "none",
        {
            "queries": args.queries, "corpus": args.corpus,
            "sparse_index": args.sparse_index, "dense_index": args.dense_index,
            "config": args.config,
        },
        outputs,
    )
    for outcome in failures:
        print(f"query {outcome.query.id} failed: {outcome.error}", file=sys.stderr)
    print(f"ran {len(queries)} queries ({len(failures)} failed) -> {args.out}")
    if failures and not rankings:
        return EXIT_RUNTIME
    return EXIT_OK


def _format_report_table(tag: str, report: MetricReport) -> str:
    lines = [f"run: {tag}", f"{'metric':<14}{'mean':>10}{'evaluated':>12}{'skipped':>10}"]
    for name, metric_slice in report.slices.items():
        lines.append(
            f"{name:<14}{metric_slice.mean:>10.4f}{len(metric_slice.per_query):>12}"
            f"{len(metric_slice.skipped):>10}"
        )
    return "\n".join(lines)


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        run = read_run(_require_file(args.run, "run file"))
        qrels = load_qrels(_require_file(args.qrels, "qrels file"))
        report = evaluate_run(run, qrels, map_binarize=args.map_binarize,
                              ndcg_k=args.ndcg_k, recall_k=args.recall_k)
    except EvalError as exc:
        raise UsageError(str(exc)) from exc
    payload: dict = {"run": str(args.run), "tag": run.tag, "metrics": report.to_dict()}
    output = [_format_report_table(run.tag, report)]
    if args.compare:
        other = read_run(_require_file(args.compare, "comparison run file"))
        other_report = evaluate_run(other, qrels, map_binarize=args.map_binarize,
                                    ndcg_k=args.ndcg_k, recall_k=args.recall_k)
        comparison = {}
        output.append(f"\ncompared with: {args.compare}")
        output.append(f"{'metric':<14}{'this':>10}{'other':>10}{'diff':>10}{'t':>10}{'p':>10}")
        for name in report.slices:
            ours, theirs = report.slices[name], other_report.slices[name]
            shared = sorted(set(ours.per_query) & set(theirs.per_query))
            if len(shared) < 2:
                comparison[name] = {"error": "fewer than 2 shared evaluated queries"}
                continue
            result = paired_t_test([ours.per_query[q] for q in shared],
                                   [theirs.per_query[q] for q in shared])
            comparison[name] = {
                "mean_this": ours.mean, "mean_other": theirs.mean,
                "t": result.t, "p": result.p, "degenerate": result.degenerate,
                "queries": len(shared),
            }
            marker = " *" if result.p < 0.05 else ""
            output.append(
                f"{name:<14}{ours.mean:>10.4f}{theirs.mean:>10.4f}"
                f"{ours.mean - theirs.mean:>10.4f}{result.t:>10.4f}{result.p:>10.4f}{marker}"
            )
        payload["compare"] = {"run": str(args.compare), "tag": other.tag, "tests": comparison}
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print("\n".join(output))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inter",
        description="Iterative retrieval/LLM refinement toolkit",
    )
    parser.add_argument(
        "--version", action="version",
        version=(f"inter {__version__} (index-format {INDEX_FORMAT_VERSION}, "
                 f"vector-format {VECTOR_FORMAT_VERSION}, "
                 f"config-schema {CONFIG_SCHEMA_VERSION})"),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    index = sub.add_parser("index", help="build retrieval indexes")
    index_sub = index.add_subparsers(dest="index_command", required=True)

    build = index_sub.add_parser("build", help="build a BM25 inverted index")
    build.add_argument("--corpus", required=True)
    build.add_argument("--format", choices=["beir-jsonl", "tsv"], default="beir-jsonl")
    build.add_argument("--out", required=True)
    build.add_argument("--k1", type=float, default=0.9)
    build.add_argument("--b", type=float, default=0.4)
    build.add_argument("--stopwords", help="file of stopwords to drop at index time")
    build.add_argument("--stem", choices=["none", "s"], default="none")
    build.add_argument("--strict", action="store_true", help="malformed corpus lines are fatal")
    build.set_defaults(handler=cmd_index_build)

    encode = index_sub.add_parser("encode", help="build a dense vector index")
    encode.add_argument("--corpus", required=True)
    encode.add_argument("--format", choices=["beir-jsonl", "tsv"], default="beir-jsonl")
    encode.add_argument("--out", required=True)
    encode.add_argument("--embedder", choices=["mock-hash", "http", "file"], default="mock-hash")
    encode.add_argument("--dim", type=int, default=64)
    encode.add_argument("--embed-url")
    encode.add_argument("--vectors", help="pre-encoded id-keyed vectors (INTERVEC or JSONL)")
    encode.set_defaults(handler=cmd_index_encode)

    search = sub.add_parser("search", help="one-shot retrieval without the refinement loop")
    search.add_argument("--queries", required=True)
    search.add_argument("--mode", choices=["sparse", "dense", "hybrid"], default="sparse")
    search.add_argument("--k", type=int, default=1000)
    search.add_argument("--sparse-index")
    search.add_argument("--dense-index")
    search.add_argument("--out", required=True)
    search.add_argument("--tag", default="inter")
    search.add_argument("--include-zero", action="store_true",
                        help="pad sparse results with zero-score documents")
    _add_embedder_flags(search)
    search.set_defaults(handler=cmd_search)

    run = sub.add_parser("run", help="run the iterative refinement pipeline")
    run.add_argument("--queries", required=True)
    run.add_argument("--corpus", help="corpus file (required when M >= 2)")
    run.add_argument("--format", choices=["beir-jsonl", "tsv"], default="beir-jsonl")
    run.add_argument("--sparse-index")
    run.add_argument("--dense-index")
    run.add_argument("--config", help="JSON config mirroring the pipeline settings")
    run.add_argument("--M", type=int, default=None)
    run.add_argument("--h", type=int, default=None)
    run.add_argument("--k", type=int, default=None)
    run.add_argument("--final-k", type=int, default=None)
    run.add_argument("--intermediate-rm", choices=["sparse", "dense", "hybrid"], default=None)
    run.add_argument("--final-rm", choices=["sparse", "dense", "hybrid"], default=None)
    run.add_argument("--mock-llm", action="store_true", help="use the deterministic offline mock")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--llm-cache", help="JSONL generation cache for replay")
    run.add_argument("--llm-cache-only", action="store_true",
                     help="serve generations from the cache; any miss fails")
    run.add_argument("--rate-limit", type=float, default=None, help="LLM requests per minute")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--strict", action="store_true", help="per-query failures abort the run")
    run.add_argument("--out", required=True)
    run.add_argument("--trace", help="write per-iteration trace JSONL here")
    run.add_argument("--tag", default="inter")
    _add_embedder_flags(run)
    run.set_defaults(handler=cmd_run)

    eval_cmd = sub.add_parser("eval", help="evaluate a TREC run file against qrels")
    eval_cmd.add_argument("--run", required=True)
    eval_cmd.add_argument("--qrels", required=True)
    eval_cmd.add_argument("--compare", help="second run file for a paired t-test")
    eval_cmd.add_argument("--json", action="store_true")
    eval_cmd.add_argument("--map-binarize", type=int, default=1)
    eval_cmd.add_argument("--ndcg-k", type=int, default=10)
    eval_cmd.add_argument("--recall-k", type=int, default=1000)
    eval_cmd.set_defaults(handler=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("INTER_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, GenerationError, EmbeddingError, EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
