"""The iterative retrieval/generation loop and the hybrid retrieval strategy.

Each iteration: (1) generate a knowledge collection from the current prompt
(initial prompt on the first pass, refine prompt over the previous top-k
afterwards), (2) expand the query by interleaving it before every generated
passage, (3) retrieve top-k with the intermediate retrieval model. After M
iterations the final ranking comes from the final retrieval model over the
last expanded query. M=0 bypasses generation entirely and degenerates to the
bare retrieval model.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus, Query
from .dense import Embedder, FileBackedEmbedder, VectorIndex, dense_search_vector, expanded_query_vector
from .llm import GenerationError, GenerationProvider, GenerationRequest, KnowledgeCollection, generate
from .prompts import PromptTemplate, initial_prompt, refine_prompt
from .ranking import RankedList
from .sparse import InvertedIndex, sparse_search

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

_RM_CHOICES = ("sparse", "dense", "hybrid")


class PipelineError(RuntimeError):
    def __init__(self, message: str, trace: list["IterationStep"] | None = None):
        super().__init__(message)
        self.partial_trace = trace or []


@dataclass(frozen=True)
class InterConfig:
    M: int = 2
    h: int = 10
    k: int = 15
    intermediate_rm: str = "dense"
    final_rm: str = "sparse"
    final_k: int = 1000
    expansion: str = "interleaved"
    separator: str = " "
    query_encoding: str = "chunk-mean"  # dense policy for expanded queries
    temperature: float = 1.0
    frequency_penalty: float = 0.0
    max_tokens: int = 256
    llm: dict = field(default_factory=dict)  # provider settings, resolved by the CLI

    def __post_init__(self):
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.final_k < 1:
            raise ValueError(f"final_k must be >= 1, got {self.final_k}")
        for name in ("intermediate_rm", "final_rm"):
            value = getattr(self, name)
            if value not in _RM_CHOICES:
                raise ValueError(f"{name} must be one of {_RM_CHOICES}, got {value!r}")
        if self.expansion != "interleaved":
            raise ValueError(f"expansion must be 'interleaved', got {self.expansion!r}")
        if self.query_encoding not in ("chunk-mean", "whole"):
            raise ValueError(f"query_encoding must be 'chunk-mean' or 'whole', got {self.query_encoding!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "InterConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def required_rms(self) -> set[str]:
        needed = {self.final_rm}
        if self.M > 0:
            needed.add(self.intermediate_rm)
        return needed


@dataclass
class SearchIndexes:
    corpus: Corpus | None = None
    sparse: InvertedIndex | None = None
    dense: VectorIndex | None = None
    embedder: Embedder | None = None

    def validate_for(self, config: InterConfig) -> None:
        needed = config.required_rms()
        if needed & {"sparse", "hybrid"} and self.sparse is None:
            raise ValueError("configuration requires a sparse index but none was provided")
        if needed & {"dense", "hybrid"}:
            if self.dense is None:
                raise ValueError("configuration requires a dense index but none was provided")
            if self.embedder is None:
                raise ValueError("dense retrieval requires an embedder")
        if config.M >= 2 and self.corpus is None:
            raise ValueError("M >= 2 requires the corpus (refine prompts embed document texts)")


@dataclass
class IterationStep:
    """One loop pass, sufficient to audit or replay the run."""

    iteration: int  # 1-based
    prompt: str
    knowledge: KnowledgeCollection
    expanded_query: str
    retrieved: RankedList

    def trace_record(self, query_id: str) -> dict:
        return {
            "query_id": query_id,
            "iteration": self.iteration,
            "prompt": self.prompt,
            "passages": list(self.knowledge.passages),
            "expanded_query_sha256": hashlib.sha256(
                self.expanded_query.encode("utf-8")
            ).hexdigest(),
            "retrieved": [[doc_id, score] for doc_id, score in self.retrieved.entries],
        }


def expand_query(query_text: str, passages: list[str], separator: str = " ") -> str:
    """Interleave the query before each passage: q s1 q s2 ... q sh."""
    if not passages:
        raise ValueError("cannot expand query with an empty knowledge collection")
    parts: list[str] = []
    for passage in passages:
        parts.append(query_text)
        parts.append(passage)
    return separator.join(parts)


def interleave_merge(sparse_ids: list[str], dense_ids: list[str], k: int) -> list[str]:
    """Top half from each list, rank-interleaved sparse-first, deduplicated.

    A doc retrieved by both sides keeps its earlier position; remaining slots
    backfill from the deeper ranks of both lists (same interleave) until k
    unique docs or both lists are exhausted.
    """
    half_sparse = (k + 1) // 2
    half_dense = k // 2
    candidates: list[str] = []
    for i in range(max(half_sparse, half_dense)):
        if i < half_sparse and i < len(sparse_ids):
            candidates.append(sparse_ids[i])
        if i < half_dense and i < len(dense_ids):
            candidates.append(dense_ids[i])
    for i in range(max(len(sparse_ids), len(dense_ids))):
        if half_sparse + i < len(sparse_ids):
            candidates.append(sparse_ids[half_sparse + i])
        if half_dense + i < len(dense_ids):
            candidates.append(dense_ids[half_dense + i])
    merged: list[str] = []
    seen: set[str] = set()
    for doc_id in candidates:
        if doc_id not in seen:
            seen.add(doc_id)
            merged.append(doc_id)
        if len(merged) == k:
            break
    return merged


def hybrid_search(query_text: str, k: int, sparse_idx: InvertedIndex,
                  dense_idx: VectorIndex, embedder: Embedder, query_id: str = "",
                  dense_query_vector=None) -> RankedList:
    """Half sparse, half dense, merged by rank interleave (sparse first).

    Sparse and inner-product scores are incommensurable, so merged entries
    carry reciprocal-rank scores.
    """
    if k < 2:
        raise ValueError(f"hybrid search requires k >= 2, got {k}")
    sparse_ids = sparse_search(sparse_idx, query_text, k, query_id).doc_ids()
    if dense_query_vector is None:
        dense_query_vector = embedder.encode_one(query_text, role="query")
    dense_ids = dense_search_vector(dense_idx, dense_query_vector, k, query_id).doc_ids()
    merged = interleave_merge(sparse_ids, dense_ids, k)
    entries = [(doc_id, 1.0 / (rank + 1)) for rank, doc_id in enumerate(merged)]
    return RankedList(query_id=query_id, entries=entries)


def _retrieve(mode: str, query_text: str, k: int, indexes: SearchIndexes,
              config: InterConfig, query_id: str,
              raw_query: str | None = None,
              passages: list[str] | None = None) -> RankedList:
    """Dispatch one retrieval; dense expanded queries honor the chunk policy."""
    dense_vector = None
    if mode in ("dense", "hybrid") and passages is not None:
        dense_vector = expanded_query_vector(
            indexes.embedder, raw_query if raw_query is not None else query_text,
            passages, policy=config.query_encoding, separator=config.separator,
        )
    if mode == "sparse":
        return sparse_search(indexes.sparse, query_text, k, query_id)
    if mode == "dense":
        if dense_vector is None:
            dense_vector = _plain_query_vector(indexes.embedder, query_text, query_id)
        return dense_search_vector(indexes.dense, dense_vector, k, query_id)
    if mode == "hybrid":
        if dense_vector is None:
            dense_vector = _plain_query_vector(indexes.embedder, query_text, query_id)
        return hybrid_search(query_text, k, indexes.sparse, indexes.dense,
                             indexes.embedder, query_id, dense_query_vector=dense_vector)
    raise ValueError(f"unknown retrieval mode: {mode!r}")


def _plain_query_vector(embedder: Embedder, query_text: str, query_id: str):
    # File-backed tables are keyed by id, not text.
    if isinstance(embedder, FileBackedEmbedder):
        return embedder.encode([query_id], role="query")[0]
    return embedder.encode_one(query_text, role="query")


def run_iteration(query: Query, prev_ranked: RankedList | None, config: InterConfig,
                  indexes: SearchIndexes, provider: GenerationProvider,
                  iteration: int,
                  initial_template: PromptTemplate | None = None,
                  refine_template: PromptTemplate | None = None,
                  seed: int | None = None) -> IterationStep:
    """One generation + expansion + retrieval pass."""
    if prev_ranked is None or not prev_ranked:
        kwargs = {"template": initial_template} if initial_template else {}
        prompt = initial_prompt(query, **kwargs)
    else:
        if indexes.corpus is None:
            raise ValueError("refine prompts require the corpus for document texts")
        kwargs = {"template": refine_template} if refine_template else {}
        prompt = refine_prompt(query, prev_ranked, indexes.corpus, config.k, **kwargs)
    request = GenerationRequest(
        prompt=prompt,
        num_samples=config.h,
        temperature=config.temperature,
        frequency_penalty=config.frequency_penalty,
        max_tokens=config.max_tokens,
        seed=seed,
    )
    knowledge = generate(provider, request)
    expanded = expand_query(query.text, knowledge.passages, config.separator)
    retrieved = _retrieve(
        config.intermediate_rm, expanded, config.k, indexes, config,
        query.id, raw_query=query.text, passages=knowledge.passages,
    )
    return IterationStep(
        iteration=iteration, prompt=prompt, knowledge=knowledge,
        expanded_query=expanded, retrieved=retrieved,
    )


def run_inter(query: Query, config: InterConfig, indexes: SearchIndexes,
              provider: GenerationProvider | None,
              initial_template: PromptTemplate | None = None,
              refine_template: PromptTemplate | None = None,
              seed: int | None = None) -> tuple[RankedList, list[IterationStep]]:
    """Run M refinement iterations, then the final retrieval.

    M=0 retrieves over the raw query with the final retrieval model and never
    touches the provider. Otherwise the final ranking uses the last
    iteration's expanded query at depth final_k.
    """
    indexes.validate_for(config)
    if config.M == 0:
        final = _retrieve(config.final_rm, query.text, config.final_k, indexes,
                          config, query.id)
        return final, []
    if provider is None:
        raise ValueError("M > 0 requires a generation provider")
    trace: list[IterationStep] = []
    prev: RankedList | None = None
    for iteration in range(1, config.M + 1):
        try:
            step = run_iteration(query, prev, config, indexes, provider, iteration,
                                 initial_template, refine_template, seed=seed)
        except GenerationError as exc:
            raise PipelineError(
                f"query {query.id!r}: generation failed at iteration {iteration}: {exc}",
                trace,
            ) from exc
        trace.append(step)
        prev = step.retrieved
    last = trace[-1]
    final = _retrieve(
        config.final_rm, last.expanded_query, config.final_k, indexes, config,
        query.id, raw_query=query.text, passages=last.knowledge.passages,
    )
    return final, trace


@dataclass
class QueryOutcome:
    query: Query
    ranking: RankedList | None
    trace: list[IterationStep]
    error: str | None = None


def iter_batch(queries: list[Query], config: InterConfig, indexes: SearchIndexes,
               provider: GenerationProvider | None, workers: int = 1,
               strict: bool = False, seed: int | None = None,
               initial_template: PromptTemplate | None = None,
               refine_template: PromptTemplate | None = None):
    """Process queries concurrently, yielding outcomes in input order.

    One query's failure is logged and skipped unless strict. Yielding as
    results arrive lets callers stream trace records, so an interrupted batch
    still leaves a valid prefix on disk.
    """

    def one(query: Query) -> QueryOutcome:
        try:
            ranking, trace = run_inter(query, config, indexes, provider,
                                       initial_template, refine_template, seed=seed)
            return QueryOutcome(query, ranking, trace)
        except PipelineError as exc:
            if strict:
                raise
            logger.error("skipping query %s: %s", query.id, exc)
            return QueryOutcome(query, None, exc.partial_trace, error=str(exc))

    if workers <= 1:
        for query in queries:
            yield one(query)
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(one, query) for query in queries]
        for future in futures:
            yield future.result()


def run_batch(queries: list[Query], config: InterConfig, indexes: SearchIndexes,
              provider: GenerationProvider | None, workers: int = 1,
              strict: bool = False, seed: int | None = None,
              initial_template: PromptTemplate | None = None,
              refine_template: PromptTemplate | None = None) -> list[QueryOutcome]:
    return list(iter_batch(queries, config, indexes, provider, workers, strict,
                           seed, initial_template, refine_template))


def write_trace(path: str | Path, outcomes: list[QueryOutcome]) -> None:
    """Trace JSONL: one record per (query, iteration), in input order."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as out:
        for outcome in outcomes:
            for step in outcome.trace:
                record = step.trace_record(outcome.query.id)
                out.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)
