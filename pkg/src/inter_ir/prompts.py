"""The two prompt templates driving generation, with placeholder substitution.

`{query}` and `{passages}` are the only placeholders. Retrieved passages are
numbered on separate lines in rank order, each truncated to the word limit
before insertion. Custom templates with the same placeholder syntax can be
loaded from a file for prompt ablations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, Query, truncate_tokens
from .ranking import RankedList

INITIAL_TEMPLATE_BODY = (
    "Please write a passage to answer the question.\n"
    "Question: {query}\n"
    "Passage:"
)

REFINE_TEMPLATE_BODY = (
    "Give a question {query} and its possible answering passages {passages}\n"
    "Please write a correct answering passage:"
)

PASSAGE_WORD_LIMIT = 256

_PLACEHOLDER_RE = re.compile(r"\{(query|passages)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str  # "initial" or "refine"
    body: str

    def __post_init__(self):
        counts = {"query": 0, "passages": 0}
        for match in _PLACEHOLDER_RE.finditer(self.body):
            counts[match.group(1)] += 1
        if self.name == "initial":
            if counts != {"query": 1, "passages": 0}:
                raise ValueError("initial template must contain {query} exactly once and no {passages}")
        elif self.name == "refine":
            if counts != {"query": 1, "passages": 1}:
                raise ValueError("refine template must contain {query} and {passages} exactly once each")
        else:
            raise ValueError(f"template name must be 'initial' or 'refine', got {self.name!r}")

    def render(self, **values: str) -> str:
        # Single pass so substituted text can never be re-substituted.
        parts: list[str] = []
        cursor = 0
        for match in _PLACEHOLDER_RE.finditer(self.body):
            parts.append(self.body[cursor:match.start()])
            parts.append(values[match.group(1)])
            cursor = match.end()
        parts.append(self.body[cursor:])
        return "".join(parts)


INITIAL_TEMPLATE = PromptTemplate(name="initial", body=INITIAL_TEMPLATE_BODY)
REFINE_TEMPLATE = PromptTemplate(name="refine", body=REFINE_TEMPLATE_BODY)


def initial_prompt(query: Query, template: PromptTemplate = INITIAL_TEMPLATE) -> str:
    text = query.text.strip()
    if not text:
        raise ValueError(f"query {query.id!r} has empty text")
    return template.render(query=text)


def assemble_passages(docs: RankedList, corpus: Corpus, k_used: int,
                      word_limit: int = PASSAGE_WORD_LIMIT) -> str:
    """Numbered, rank-ordered, word-truncated passage block for {passages}."""
    lines = []
    for rank, doc_id in enumerate(docs.doc_ids()[:k_used], start=1):
        text = truncate_tokens(corpus.get(doc_id).full_text(), word_limit)
        lines.append(f"{rank}. {text}")
    return "\n".join(lines)


def refine_prompt(query: Query, docs: RankedList, corpus: Corpus, k_used: int,
                  template: PromptTemplate = REFINE_TEMPLATE,
                  word_limit: int = PASSAGE_WORD_LIMIT) -> str:
    if not docs:
        raise ValueError(f"query {query.id!r}: cannot build refine prompt from empty ranking")
    return template.render(
        query=query.text.strip(),
        passages=assemble_passages(docs, corpus, k_used, word_limit),
    )


def load_template(path: str | Path, name: str) -> PromptTemplate:
    """Read a user-supplied template file (same placeholder syntax)."""
    body = Path(path).read_text(encoding="utf-8")
    return PromptTemplate(name=name, body=body)
