"""Corpus and query ingestion plus the tokenization shared by every module.

Supported inputs:
  - BEIR-style corpus JSONL: one object per line with `_id`, `title`, `text`
  - TSV corpus: `id<TAB>text`
  - Query file: TSV `query-id<TAB>query-text`

Token rules are deliberately simple and explicit: lowercase, split on any
non-alphanumeric codepoint, keep numerals. Stopword removal and stemming are
opt-in index options, never defaults.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)

# Unicode alphanumeric runs (\w minus underscore).
_TOKEN_RE = re.compile(r"[^\W_]+")
_WORD_RE = re.compile(r"\S+")

DEFAULT_TRUNCATE_LIMIT = 256


class CorpusError(ValueError):
    """Raised for unreadable, duplicated, or malformed corpus records."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str | None
    text: str

    def full_text(self) -> str:
        """Title prepended to body with a single space, as indexed and prompted."""
        if self.title:
            return f"{self.title} {self.text}"
        return self.text


@dataclass(frozen=True)
class Query:
    id: str
    text: str


class Corpus:
    """Immutable after load; iteration is always sorted by document id."""

    def __init__(self, documents: list[Document]):
        self._docs: dict[str, Document] = {}
        for doc in documents:
            if doc.id in self._docs:
                raise CorpusError(f"duplicate document id: {doc.id!r}")
            self._docs[doc.id] = doc

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __iter__(self) -> Iterator[Document]:
        for doc_id in sorted(self._docs):
            yield self._docs[doc_id]

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id: {doc_id!r}") from None

    @property
    def doc_ids(self) -> list[str]:
        return sorted(self._docs)


def tokenize(text: str) -> list[str]:
    """Lowercased terms split on any non-alphanumeric codepoint."""
    return _TOKEN_RE.findall(text.lower())


def truncate_tokens(text: str, limit: int = DEFAULT_TRUNCATE_LIMIT) -> str:
    """Prefix of `text` covering its first `limit` whitespace-delimited words.

    Casing and internal punctuation of the kept span are preserved; text with
    at most `limit` words is returned unchanged.
    """
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    end = None
    for count, match in enumerate(_WORD_RE.finditer(text), start=1):
        if count == limit:
            end = match.end()
            break
    if end is None:
        return text
    # Only cut when more words follow the limit-th one.
    if _WORD_RE.search(text, end) is None:
        return text
    return text[:end]


def _parse_beir_jsonl_line(line: str) -> Document:
    record = json.loads(line)
    doc_id = record["_id"]
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusError(f"invalid _id: {doc_id!r}")
    title = record.get("title") or None
    return Document(id=doc_id, title=title, text=record.get("text", ""))


def _parse_tsv_line(line: str) -> Document:
    doc_id, _, text = line.partition("\t")
    if not doc_id or "\t" not in line:
        raise CorpusError(f"expected id<TAB>text, got: {line[:80]!r}")
    return Document(id=doc_id, title=None, text=text.rstrip("\n"))


def load_corpus(path: str | Path, format: str = "beir-jsonl", strict: bool = False) -> Corpus:
    """Load a corpus file; malformed lines are skipped with a warning unless strict."""
    parsers = {"beir-jsonl": _parse_beir_jsonl_line, "tsv": _parse_tsv_line}
    if format not in parsers:
        raise CorpusError(f"unknown corpus format: {format!r}")
    parse = parsers[format]

    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                doc = parse(line)
            except (CorpusError, json.JSONDecodeError, KeyError, TypeError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: malformed line: {exc}") from exc
                logger.warning("%s:%d: skipping malformed line (%s)", path, lineno, exc)
                continue
            if doc.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate document id: {doc.id!r}")
            seen.add(doc.id)
            documents.append(doc)
    return Corpus(documents)


def load_queries(path: str | Path) -> list[Query]:
    """Load a TSV query file (`query-id<TAB>query-text`), preserving file order."""
    queries: list[Query] = []
    seen: set[str] = set()
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid, _, text = line.partition("\t")
            if not qid or not text.strip():
                raise CorpusError(f"{path}:{lineno}: expected query-id<TAB>query-text")
            if qid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate query id: {qid!r}")
            seen.add(qid)
            queries.append(Query(id=qid, text=text.strip()))
    return queries
