#!/usr/bin/env python3
"""Benchmark the compiled BM25 kernel against the pure-numpy fallback.

Builds a synthetic corpus, scores a batch of long expanded-style queries with
both backends, verifies the scores are bitwise identical, and reports
throughput.

    python benchmarks/bench_bm25.py --docs 50000 --queries 20 --query-terms 2000
"""

import argparse
import random
import time

import numpy as np

from inter_ir import _bm25_fallback
from inter_ir import sparse as sparse_module
from inter_ir.corpus import Corpus, Document
from inter_ir.sparse import build_index


def synthetic_corpus(rng: random.Random, num_docs: int, vocab: int, avg_len: int) -> Corpus:
    # Zipf-ish term distribution so postings lists have realistic skew.
    weights = np.array([1.0 / (rank + 1) for rank in range(vocab)])
    weights /= weights.sum()
    terms = [f"t{i}" for i in range(vocab)]
    docs = []
    for i in range(num_docs):
        length = max(1, int(rng.gauss(avg_len, avg_len / 4)))
        chosen = rng.choices(terms, weights=weights, k=length)
        docs.append(Document(f"d{i:06d}", None, " ".join(chosen)))
    return Corpus(docs)


def synthetic_queries(rng: random.Random, count: int, terms_per_query: int, vocab: int):
    return [
        [f"t{rng.randrange(vocab)}" for _ in range(terms_per_query)]
        for _ in range(count)
    ]


def time_backend(index, queries, backend) -> tuple[float, list[np.ndarray]]:
    saved = sparse_module.score_postings
    sparse_module.score_postings = backend
    try:
        results = []
        start = time.perf_counter()
        for tokens in queries:
            results.append(index.score_all(tokens))
        elapsed = time.perf_counter() - start
    finally:
        sparse_module.score_postings = saved
    return elapsed, results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=20000)
    parser.add_argument("--vocab", type=int, default=5000)
    parser.add_argument("--avg-len", type=int, default=60)
    parser.add_argument("--queries", type=int, default=20)
    parser.add_argument("--query-terms", type=int, default=2000,
                        help="terms per query (expanded queries run thousands)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    print(f"building corpus: {args.docs} docs, vocab {args.vocab}, avg len {args.avg_len} ...")
    corpus = synthetic_corpus(rng, args.docs, args.vocab, args.avg_len)
    build_start = time.perf_counter()
    index = build_index(corpus)
    print(f"index built in {time.perf_counter() - build_start:.2f} s")

    queries = synthetic_queries(rng, args.queries, args.query_terms, args.vocab)
    postings_touched = 0
    for tokens in queries:
        for term in set(tokens):
            postings_touched += index.df(term)
    print(f"queries: {args.queries} x {args.query_terms} terms "
          f"({postings_touched / 1e6:.1f} M postings touched per pass)")

    backends = [("python fallback", _bm25_fallback.score_postings)]
    if sparse_module.KERNEL_BACKEND == "cython":
        try:
            from inter_ir._bm25_kernel import score_postings as native
            backends.insert(0, ("cython kernel", native))
        except ImportError:
            pass
    else:
        print("note: compiled kernel unavailable; benchmarking fallback only")

    timings = {}
    outputs = {}
    for name, backend in backends:
        elapsed, results = time_backend(index, queries, backend)
        timings[name] = elapsed
        outputs[name] = results
        rate = postings_touched / elapsed / 1e6 if elapsed else float("inf")
        print(f"{name:>16}: {elapsed:8.3f} s total  "
              f"{elapsed / len(queries) * 1e3:8.2f} ms/query  {rate:8.1f} M postings/s")

    if len(backends) == 2:
        a, b = (outputs[name] for name, _ in backends)
        identical = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"scores bitwise identical: {identical}")
        fast, slow = (timings[name] for name, _ in backends)
        print(f"speedup: {slow / fast:.2f}x")


if __name__ == "__main__":
    main()
