"""Inner-product retrieval over precomputed document vectors.

Top-k is an exact scan (matrix-vector product + sort); at desk scale this is
fast and keeps testing exact. Embeddings come from a pluggable provider:

  - mock-hash: signed feature hashing of unigram counts, L2-normalized.
    Token t goes to bucket int(sha256(t)[:8]) mod dim with sign +1/-1 from
    the low bit of sha256(t)[8], so vectors are a pure function of the text
    bytes, stable across processes and platforms.
  - http-service: POST {"texts": [...], "role": ...} -> {"vectors": [[...]]}
  - file-backed: pre-encoded vectors looked up by id
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np
import requests

from .corpus import Corpus, tokenize
from .ranking import RankedList

logger = logging.getLogger(__name__)

VECTOR_MAGIC = b"INTERVEC"
VECTOR_FORMAT_VERSION = 1

EMBED_URL_ENV = "INTER_EMBED_URL"
EMBED_KEY_ENV = "INTER_EMBED_KEY"


class EmbeddingError(RuntimeError):
    """Raised for provider failures, missing ids, or dimension mismatches."""


class Embedder:
    """Provider interface: a deterministic text -> fixed-dim vector encoding."""

    mode: str = "abstract"
    dim: int

    def encode(self, texts: list[str], role: str) -> np.ndarray:
        """Encode a batch; returns a (len(texts), dim) float64 matrix."""
        raise NotImplementedError

    def encode_one(self, text: str, role: str) -> np.ndarray:
        if not text.strip():
            logger.warning("encoding empty text to zero vector (role=%s)", role)
            return np.zeros(self.dim, dtype=np.float64)
        return self.encode([text], role)[0]

    def encode_corpus(self, corpus: Corpus) -> np.ndarray:
        """Document matrix in sorted doc-id order."""
        texts = [doc.full_text() for doc in corpus]
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float64)
        return self.encode(texts, role="document")


class MockHashEmbedder(Embedder):
    mode = "mock-hash"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % self.dim
        sign = 1.0 if digest[8] & 1 == 0 else -1.0
        return bucket, sign

    def encode(self, texts: list[str], role: str) -> np.ndarray:
        matrix = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in tokenize(text):
                bucket, sign = self._bucket(token)
                matrix[row, bucket] += sign
            norm = np.linalg.norm(matrix[row])
            if norm > 0:
                matrix[row] /= norm
        return matrix


class FileBackedEmbedder(Embedder):
    """Vectors keyed by document/query id; encode() treats each text as a key."""

    mode = "file-backed"

    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise EmbeddingError("file-backed embedder requires a non-empty vector table")
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise EmbeddingError(f"inconsistent vector dimensions in table: {sorted(dims)}")
        self.dim = dims.pop()
        self._table = {key: np.asarray(vec, dtype=np.float64) for key, vec in table.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "FileBackedEmbedder":
        ids, matrix = load_vectors(path)
        return cls({doc_id: matrix[i] for i, doc_id in enumerate(ids)})

    def encode(self, texts: list[str], role: str) -> np.ndarray:
        rows = []
        for key in texts:
            if key not in self._table:
                raise EmbeddingError(f"id missing from vector file: {key!r}")
            rows.append(self._table[key])
        return np.array(rows, dtype=np.float64)

    def encode_corpus(self, corpus: Corpus) -> np.ndarray:
        if not len(corpus):
            return np.zeros((0, self.dim), dtype=np.float64)
        return self.encode(corpus.doc_ids, role="document")


class HttpEmbedder(Embedder):
    mode = "http-service"

    def __init__(self, url: str, api_key: str | None = None, dim: int | None = None,
                 batch_size: int = 64, timeout: float = 30.0):
        self.url = url
        self.api_key = api_key
        self.dim = dim or 0  # fixed on first response when not configured
        self.batch_size = batch_size
        self.timeout = timeout

    @classmethod
    def from_env(cls, dim: int | None = None) -> "HttpEmbedder":
        url = os.environ.get(EMBED_URL_ENV)
        if not url:
            raise EmbeddingError(f"{EMBED_URL_ENV} is not set")
        return cls(url, api_key=os.environ.get(EMBED_KEY_ENV), dim=dim)

    def _post(self, texts: list[str], role: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.url, json={"texts": texts, "role": role},
                headers=headers, timeout=self.timeout,
            )
            response.raise_for_status()
            payload = response.json()
        except (requests.RequestException, ValueError) as exc:
            raise EmbeddingError(f"embedding service failure: {exc}") from exc
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbeddingError("malformed embedding response: expected 'vectors' of batch size")
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2:
            raise EmbeddingError("malformed embedding response: vectors must be 2-d")
        if not self.dim:
            self.dim = matrix.shape[1]
        elif matrix.shape[1] != self.dim:
            raise EmbeddingError(f"service returned dim {matrix.shape[1]}, expected {self.dim}")
        return matrix

    def encode(self, texts: list[str], role: str) -> np.ndarray:
        # Batches go out in deterministic order; rows reassemble by position.
        batches = [texts[i:i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        return np.concatenate([self._post(batch, role) for batch in batches], axis=0)


class VectorIndex:
    """doc_ids[i] corresponds to matrix row i; immutable after build."""

    def __init__(self, doc_ids: list[str], matrix: np.ndarray):
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise ValueError(f"matrix shape {matrix.shape} does not match {len(doc_ids)} ids")
        if matrix.size and not np.isfinite(matrix).all():
            raise ValueError("vector index contains non-finite components")
        self.doc_ids = doc_ids
        self.matrix = np.asarray(matrix, dtype=np.float64)

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def save(self, path: str | Path) -> None:
        save_vectors(path, self.doc_ids, self.matrix)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        ids, matrix = load_vectors(path)
        return cls(ids, matrix)


def build_vector_index(corpus: Corpus, embedder: Embedder) -> VectorIndex:
    """One row per document in sorted doc-id order; encode errors name the doc."""
    try:
        matrix = embedder.encode_corpus(corpus)
    except EmbeddingError:
        raise
    except Exception as exc:
        raise EmbeddingError(f"corpus encoding failed: {exc}") from exc
    if matrix.shape[0] != len(corpus):
        raise EmbeddingError(
            f"embedder returned {matrix.shape[0]} rows for {len(corpus)} documents"
        )
    return VectorIndex(corpus.doc_ids, matrix)


def dense_search_vector(vindex: VectorIndex, query_vector: np.ndarray, k: int,
                        query_id: str = "") -> RankedList:
    """Exact top-k by inner product; ties broken by ascending doc id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_vector = np.asarray(query_vector, dtype=np.float64)
    if query_vector.shape != (vindex.dim,):
        raise EmbeddingError(
            f"query vector dim {query_vector.shape} does not match index dim {vindex.dim}"
        )
    scores = vindex.matrix @ query_vector
    scored = [(vindex.doc_ids[i], float(scores[i])) for i in range(vindex.num_docs)]
    return RankedList.from_scores(query_id, scored, k=k)


def dense_search(vindex: VectorIndex, embedder: Embedder, query_text: str, k: int,
                 query_id: str = "") -> RankedList:
    return dense_search_vector(vindex, embedder.encode_one(query_text, role="query"), k, query_id)


def expanded_query_vector(embedder: Embedder, query_text: str, passages: list[str],
                          policy: str = "chunk-mean", separator: str = " ") -> np.ndarray:
    """Vector for an expanded query too long for one encoder call.

    chunk-mean encodes each [query; passage] pair separately and averages, so
    every passage contributes regardless of encoder input limits; whole sends
    the full interleaved string in one call.
    """
    if policy == "whole":
        parts: list[str] = []
        for passage in passages:
            parts.extend((query_text, passage))
        return embedder.encode_one(separator.join(parts), role="query")
    if policy == "chunk-mean":
        if not passages:
            return embedder.encode_one(query_text, role="query")
        chunks = [f"{query_text}{separator}{p}" for p in passages]
        return embedder.encode(chunks, role="query").mean(axis=0)
    raise ValueError(f"unknown query encoding policy: {policy!r}")


def save_vectors(path: str | Path, ids: list[str], matrix: np.ndarray) -> None:
    """Serialize to the INTERVEC binary format (layout in docs/file-formats.md)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected 2-d matrix, got shape {matrix.shape}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as out:
        out.write(VECTOR_MAGIC)
        out.write(struct.pack("<I", VECTOR_FORMAT_VERSION))
        out.write(struct.pack("<I", matrix.shape[1]))
        out.write(struct.pack("<Q", len(ids)))
        for doc_id in ids:
            raw = doc_id.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
        out.write(matrix.astype("<f8").tobytes(order="C"))
    os.replace(tmp, path)


def load_vectors(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Load either INTERVEC binary or JSONL interchange ({"id":..,"vector":[..]})."""
    path = Path(path)
    with path.open("rb") as src:
        magic = src.read(8)
        if magic != VECTOR_MAGIC:
            return _load_vectors_jsonl(path)
        (version,) = struct.unpack("<I", src.read(4))
        if version != VECTOR_FORMAT_VERSION:
            raise EmbeddingError(f"{path}: unsupported vector format version {version}")
        (dim,) = struct.unpack("<I", src.read(4))
        (count,) = struct.unpack("<Q", src.read(8))
        ids = []
        for _ in range(count):
            (id_len,) = struct.unpack("<I", src.read(4))
            ids.append(src.read(id_len).decode("utf-8"))
        matrix = np.frombuffer(src.read(8 * dim * count), dtype="<f8").reshape(count, dim)
    return ids, matrix.astype(np.float64)


def _load_vectors_jsonl(path: Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    rows: list[list[float]] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                ids.append(record["id"])
                rows.append(record["vector"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise EmbeddingError(f"{path}:{lineno}: malformed vector record: {exc}") from exc
    if not rows:
        raise EmbeddingError(f"{path}: no vectors found")
    return ids, np.asarray(rows, dtype=np.float64)


def save_vectors_jsonl(path: str | Path, ids: list[str], matrix: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as out:
        for i, doc_id in enumerate(ids):
            out.write(json.dumps({"id": doc_id, "vector": list(map(float, matrix[i]))}) + "\n")
    os.replace(tmp, path)
