"""TREC-style evaluation: qrels, run files, MAP / nDCG@k / Recall@k, and
paired significance testing.

Conventions follow trec_eval: exponential nDCG gain (2^grade - 1) with
log2(rank+1) discount, unjudged documents count as non-relevant, and queries
without qualifying judgments are excluded from means (and reported).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import scipy.stats

from .ranking import RankedList


class EvalError(ValueError):
    """Raised for malformed qrels/run files or impossible metric requests."""


@dataclass
class Qrels:
    """Graded relevance judgments: (query-id, doc-id) -> grade >= 0."""

    judgments: dict[tuple[str, str], int] = field(default_factory=dict)

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise EvalError(f"negative grade for ({query_id}, {doc_id}): {grade}")
        key = (query_id, doc_id)
        if key in self.judgments:
            raise EvalError(f"duplicate judgment for ({query_id}, {doc_id})")
        self.judgments[key] = grade

    def query_ids(self) -> set[str]:
        return {qid for qid, _ in self.judgments}

    def grades_for(self, query_id: str) -> dict[str, int]:
        return {
            doc_id: grade
            for (qid, doc_id), grade in self.judgments.items()
            if qid == query_id
        }

    def relevant_docs(self, query_id: str, binarize_at: int = 1) -> set[str]:
        return {
            doc_id
            for (qid, doc_id), grade in self.judgments.items()
            if qid == query_id and grade >= binarize_at
        }


def load_qrels(path: str | Path) -> Qrels:
    """TREC 4-column qrels: `query-id 0 doc-id grade` (column 2 ignored)."""
    qrels = Qrels()
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise EvalError(f"{path}:{lineno}: expected 4 columns, got {len(fields)}")
            qid, _, doc_id, grade = fields
            try:
                qrels.add(qid, doc_id, int(grade))
            except ValueError as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from exc
    return qrels


@dataclass
class Run:
    """Per-query rankings plus the run tag, as exchanged in TREC run files."""

    tag: str
    rankings: dict[str, RankedList] = field(default_factory=dict)

    def query_ids(self) -> list[str]:
        return list(self.rankings)


def write_run(path: str | Path, rankings: list[RankedList], tag: str) -> None:
    """TREC run format: `qid Q0 docid rank score tag`, one entry per line."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as out:
        for ranked in rankings:
            for rank, (doc_id, score) in enumerate(ranked.entries, start=1):
                out.write(f"{ranked.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")
    os.replace(tmp, path)


def read_run(path: str | Path) -> Run:
    path = Path(path)
    tag = ""
    per_query: dict[str, list[tuple[str, float]]] = {}
    last_rank: dict[str, int] = {}
    last_score: dict[str, float] = {}
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise EvalError(f"{path}:{lineno}: expected 6 columns, got {len(fields)}")
            qid, _, doc_id, rank_str, score_str, tag = fields
            try:
                rank, score = int(rank_str), float(score_str)
            except ValueError as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from exc
            expected = last_rank.get(qid, 0) + 1
            if rank != expected:
                raise EvalError(f"{path}:{lineno}: rank {rank} breaks 1..n contiguity for {qid}")
            if qid in last_score and score > last_score[qid]:
                raise EvalError(f"{path}:{lineno}: score increases with rank for {qid}")
            last_rank[qid] = rank
            last_score[qid] = score
            per_query.setdefault(qid, []).append((doc_id, score))
    return Run(tag=tag, rankings={
        qid: RankedList(query_id=qid, entries=entries)
        for qid, entries in per_query.items()
    })


@dataclass
class MetricSlice:
    """One metric over one run: per-query values, their mean, skipped queries."""

    metric: str
    per_query: dict[str, float]
    skipped: list[str]

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return sum(self.per_query.values()) / len(self.per_query)


def _check_overlap(run: Run, qrels: Qrels) -> None:
    if not set(run.rankings) & qrels.query_ids():
        raise EvalError("run and qrels share no query ids")


def mean_average_precision(run: Run, qrels: Qrels, binarize_at: int = 1) -> MetricSlice:
    """AP = (1/R) * sum of precision@r at each relevant rank r; rel = grade >= threshold."""
    _check_overlap(run, qrels)
    per_query: dict[str, float] = {}
    skipped: list[str] = []
    for qid, ranked in run.rankings.items():
        relevant = qrels.relevant_docs(qid, binarize_at)
        if not relevant:
            skipped.append(qid)
            continue
        hits = 0
        precision_sum = 0.0
        for rank, doc_id in enumerate(ranked.doc_ids(), start=1):
            if doc_id in relevant:
                hits += 1
                precision_sum += hits / rank
        per_query[qid] = precision_sum / len(relevant)
    return MetricSlice("map", per_query, skipped)


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> MetricSlice:
    """nDCG@k with gain 2^grade - 1 and discount log2(rank + 1)."""
    _check_overlap(run, qrels)
    per_query: dict[str, float] = {}
    skipped: list[str] = []
    for qid, ranked in run.rankings.items():
        grades = qrels.grades_for(qid)
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum((2 ** g - 1) / math.log2(r + 1) for r, g in enumerate(ideal, start=1))
        if idcg == 0:
            skipped.append(qid)
            continue
        dcg = 0.0
        for rank, doc_id in enumerate(ranked.doc_ids()[:k], start=1):
            grade = grades.get(doc_id, 0)
            dcg += (2 ** grade - 1) / math.log2(rank + 1)
        per_query[qid] = dcg / idcg
    return MetricSlice(f"ndcg@{k}", per_query, skipped)


def recall_at_k(run: Run, qrels: Qrels, k: int = 1000, binarize_at: int = 1) -> MetricSlice:
    _check_overlap(run, qrels)
    per_query: dict[str, float] = {}
    skipped: list[str] = []
    for qid, ranked in run.rankings.items():
        relevant = qrels.relevant_docs(qid, binarize_at)
        if not relevant:
            skipped.append(qid)
            continue
        top = set(ranked.doc_ids()[:k])
        per_query[qid] = len(relevant & top) / len(relevant)
    return MetricSlice(f"recall@{k}", per_query, skipped)


@dataclass
class MetricReport:
    """All reported metrics for one run."""

    slices: dict[str, MetricSlice]

    @property
    def means(self) -> dict[str, float]:
        return {name: s.mean for name, s in self.slices.items()}

    def to_dict(self) -> dict:
        return {
            name: {
                "mean": s.mean,
                "evaluated": len(s.per_query),
                "skipped": sorted(s.skipped),
                "per_query": s.per_query,
            }
            for name, s in self.slices.items()
        }


def evaluate_run(run: Run, qrels: Qrels, map_binarize: int = 1, ndcg_k: int = 10,
                 recall_k: int = 1000) -> MetricReport:
    return MetricReport(slices={
        "map": mean_average_precision(run, qrels, map_binarize),
        f"ndcg@{ndcg_k}": ndcg_at_k(run, qrels, ndcg_k),
        f"recall@{recall_k}": recall_at_k(run, qrels, recall_k),
    })


@dataclass
class TTestResult:
    t: float
    p: float
    degenerate: bool = False


def paired_t_test(per_query_a: list[float], per_query_b: list[float]) -> TTestResult:
    """Two-sided paired Student's t over matched per-query metric values.

    Zero-variance differences are degenerate: p=1 when the lists are
    identical, p=0 when they differ by a constant.
    """
    if len(per_query_a) != len(per_query_b):
        raise EvalError(
            f"paired test needs matched lists, got {len(per_query_a)} vs {len(per_query_b)}"
        )
    n = len(per_query_a)
    if n < 2:
        raise EvalError(f"paired test needs at least 2 pairs, got {n}")
    diffs = [a - b for a, b in zip(per_query_a, per_query_b)]
    mean = sum(diffs) / n
    variance = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if variance == 0:
        if mean == 0:
            return TTestResult(t=0.0, p=1.0, degenerate=True)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, degenerate=True)
    t = mean * math.sqrt(n) / math.sqrt(variance)
    p = 2 * scipy.stats.t.sf(abs(t), df=n - 1)
    return TTestResult(t=t, p=float(p))
