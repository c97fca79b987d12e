"""BM25 inverted index with exact top-k retrieval over arbitrarily long queries.

Scoring uses the Lucene-style variant: idf = ln(1 + (N-df+0.5)/(df+0.5)) with
k1=0.9, b=0.4 defaults. Queries are scored term-at-a-time over postings, each
unique term weighted by its frequency in the query, which is mathematically
identical to summing per-occurrence contributions.

The accumulation loop runs in the compiled kernel when available; set
INTER_PURE_PYTHON=1 to force the numpy fallback (both give bitwise-identical
scores).
"""

from __future__ import annotations

import json
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, tokenize
from .ranking import RankedList

if os.environ.get("INTER_PURE_PYTHON"):
    from ._bm25_fallback import score_postings

    KERNEL_BACKEND = "python"
else:
    try:
        from ._bm25_kernel import score_postings

        KERNEL_BACKEND = "cython"
    except ImportError:
        from ._bm25_fallback import score_postings

        KERNEL_BACKEND = "python"

INDEX_MAGIC = b"INTERIDX"
INDEX_FORMAT_VERSION = 1

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


class IndexFormatError(ValueError):
    """Raised when an index file is corrupt or from an unsupported version."""


@dataclass(frozen=True)
class Bm25Params:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class IndexOptions:
    """Analysis chain applied to documents at build time and queries at search time."""

    params: Bm25Params = field(default_factory=Bm25Params)
    stopwords: frozenset[str] = frozenset()
    stem: str = "none"  # "none" or "s" (plural stripper)

    def __post_init__(self):
        if self.stem not in ("none", "s"):
            raise ValueError(f"stem must be 'none' or 's', got {self.stem!r}")

    def analyze(self, text: str) -> list[str]:
        tokens = tokenize(text)
        if self.stopwords:
            tokens = [t for t in tokens if t not in self.stopwords]
        if self.stem == "s":
            tokens = [_s_stem(t) for t in tokens]
        return tokens


def _s_stem(token: str) -> str:
    """Harman's S-stemmer: conservative English plural stripping."""
    if token.endswith("ies") and not token.endswith(("eies", "aies")):
        return token[:-3] + "y"
    if token.endswith("es") and not token.endswith(("aes", "ees", "oes")):
        return token[:-1]
    if token.endswith("s") and not token.endswith(("us", "ss")):
        return token[:-1]
    return token


class InvertedIndex:
    """Immutable term -> postings structure with collection statistics.

    Postings are stored as parallel arrays (doc position, term frequency)
    per term; doc positions refer to `doc_ids`, which is sorted, so postings
    are ordered by doc id.
    """

    def __init__(
        self,
        doc_ids: list[str],
        doc_length_array: np.ndarray,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        options: IndexOptions,
    ):
        self.doc_ids = doc_ids
        self._doc_pos = {doc_id: i for i, doc_id in enumerate(doc_ids)}
        self._lengths = doc_length_array
        self._postings = postings
        self.options = options
        self.num_docs = len(doc_ids)
        self.avg_doc_length = float(self._lengths.mean()) if self.num_docs else 0.0
        params = options.params
        # Per-doc k1*(1 - b + b*len/avg), the tf-saturation denominator term.
        if self.num_docs and self.avg_doc_length > 0:
            self._length_norms = params.k1 * (
                1.0 - params.b + params.b * self._lengths / self.avg_doc_length
            )
        else:
            self._length_norms = np.full(self.num_docs, params.k1, dtype=np.float64)

    @property
    def params(self) -> Bm25Params:
        return self.options.params

    @property
    def doc_lengths(self) -> dict[str, int]:
        return {doc_id: int(self._lengths[i]) for i, doc_id in enumerate(self.doc_ids)}

    @property
    def vocabulary(self) -> list[str]:
        return sorted(self._postings)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._doc_pos

    def doc_length(self, doc_id: str) -> int:
        return int(self._lengths[self._doc_pos[doc_id]])

    def postings_for(self, term: str) -> list[tuple[str, int]]:
        if term not in self._postings:
            return []
        positions, tfs = self._postings[term]
        return [(self.doc_ids[p], int(tf)) for p, tf in zip(positions, tfs)]

    def df(self, term: str) -> int:
        if term not in self._postings:
            return 0
        return len(self._postings[term][0])

    def idf(self, term: str) -> float:
        df = self.df(term)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.num_docs - df + 0.5) / (df + 0.5))

    def score_all(self, query_tokens: list[str]) -> np.ndarray:
        """BM25 scores of every document for the given token stream."""
        scores = np.zeros(self.num_docs, dtype=np.float64)
        if not query_tokens or not self.num_docs:
            return scores
        counts = Counter(query_tokens)
        terms = [t for t in counts if t in self._postings]
        if not terms:
            return scores
        slices = [self._postings[t] for t in terms]
        offsets = np.zeros(len(terms) + 1, dtype=np.int64)
        np.cumsum([len(pos) for pos, _ in slices], out=offsets[1:])
        doc_indices = np.concatenate([pos for pos, _ in slices])
        term_freqs = np.concatenate([tf for _, tf in slices]).astype(np.float64)
        weights = np.array([counts[t] * self.idf(t) for t in terms], dtype=np.float64)
        score_postings(
            offsets, doc_indices, term_freqs, weights,
            self.params.k1, self._length_norms, scores,
        )
        return scores


def build_index(corpus: Corpus, options: IndexOptions | None = None) -> InvertedIndex:
    """Build the inverted index; deterministic for a fixed corpus and options."""
    options = options or IndexOptions()
    doc_ids: list[str] = []
    lengths: list[int] = []
    postings_acc: dict[str, list[tuple[int, int]]] = {}
    for position, doc in enumerate(corpus):  # corpus iterates sorted by id
        tokens = options.analyze(doc.full_text())
        doc_ids.append(doc.id)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings_acc.setdefault(term, []).append((position, tf))
    postings = {
        term: (
            np.array([p for p, _ in pairs], dtype=np.int32),
            np.array([tf for _, tf in pairs], dtype=np.int32),
        )
        for term, pairs in postings_acc.items()
    }
    return InvertedIndex(doc_ids, np.array(lengths, dtype=np.float64), postings, options)


def bm25_score(index: InvertedIndex, query_tokens: list[str], doc_id: str) -> float:
    """Score one document; repeated query terms contribute once per occurrence."""
    if doc_id not in index:
        raise KeyError(f"unknown document id: {doc_id!r}")
    position = index._doc_pos[doc_id]
    norm = float(index._length_norms[position])
    k1p1 = index.params.k1 + 1.0
    score = 0.0
    for term, qtf in Counter(query_tokens).items():
        if term not in index._postings:
            continue
        positions, tfs = index._postings[term]
        slot = np.searchsorted(positions, position)
        if slot >= len(positions) or positions[slot] != position:
            continue
        tf = float(tfs[slot])
        weight = qtf * index.idf(term)
        score += (weight * (tf * k1p1)) / (tf + norm)
    return score


def sparse_search(
    index: InvertedIndex,
    query_text: str,
    k: int,
    query_id: str = "",
    include_zero: bool = False,
) -> RankedList:
    """Top-k documents by BM25, ties broken by ascending doc id.

    Zero-score documents are excluded unless include_zero, in which case the
    result is padded with zero-score docs (ascending id) up to k.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    tokens = index.options.analyze(query_text)
    scores = index.score_all(tokens)
    nonzero = np.flatnonzero(scores)
    scored = [(index.doc_ids[i], float(scores[i])) for i in nonzero]
    ranked = RankedList.from_scores(query_id, scored, k=k)
    if include_zero and len(ranked) < k:
        have = set(ranked.doc_ids())
        for doc_id in index.doc_ids:
            if len(ranked.entries) >= k:
                break
            if doc_id not in have:
                ranked.entries.append((doc_id, 0.0))
    return ranked


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Serialize to the INTERIDX binary format (layout in docs/file-formats.md)."""
    header = {
        "k1": index.params.k1,
        "b": index.params.b,
        "stem": index.options.stem,
        "stopwords": sorted(index.options.stopwords),
        "num_docs": index.num_docs,
        "num_terms": len(index._postings),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as out:
        out.write(INDEX_MAGIC)
        out.write(struct.pack("<I", INDEX_FORMAT_VERSION))
        out.write(struct.pack("<I", len(header_bytes)))
        out.write(header_bytes)
        for i, doc_id in enumerate(index.doc_ids):
            raw = doc_id.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", int(index._lengths[i])))
        for term in sorted(index._postings):
            positions, tfs = index._postings[term]
            raw = term.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", len(positions)))
            out.write(positions.astype("<i4").tobytes())
            out.write(tfs.astype("<u4").tobytes())
    os.replace(tmp, path)


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    with path.open("rb") as src:
        magic = src.read(8)
        if magic != INDEX_MAGIC:
            raise IndexFormatError(f"{path}: not an index file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", src.read(4))
        if version != INDEX_FORMAT_VERSION:
            raise IndexFormatError(f"{path}: unsupported index format version {version}")
        (header_len,) = struct.unpack("<I", src.read(4))
        header = json.loads(src.read(header_len).decode("utf-8"))
        options = IndexOptions(
            params=Bm25Params(k1=header["k1"], b=header["b"]),
            stopwords=frozenset(header["stopwords"]),
            stem=header["stem"],
        )
        doc_ids: list[str] = []
        lengths = np.zeros(header["num_docs"], dtype=np.float64)
        for i in range(header["num_docs"]):
            (id_len,) = struct.unpack("<I", src.read(4))
            doc_ids.append(src.read(id_len).decode("utf-8"))
            (lengths[i],) = struct.unpack("<I", src.read(4))
        postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for _ in range(header["num_terms"]):
            (term_len,) = struct.unpack("<I", src.read(4))
            term = src.read(term_len).decode("utf-8")
            (df,) = struct.unpack("<I", src.read(4))
            positions = np.frombuffer(src.read(4 * df), dtype="<i4").astype(np.int32)
            tfs = np.frombuffer(src.read(4 * df), dtype="<u4").astype(np.int32)
            postings[term] = (positions, tfs)
    return InvertedIndex(doc_ids, lengths, postings, options)
