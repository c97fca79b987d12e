"""Ranked retrieval output shared by the sparse, dense, and hybrid searchers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RankedList:
    """Descending-score document ranking for one query.

    Ordering is (score desc, doc-id asc) with no duplicate ids; every searcher
    funnels through `from_scores` so the tie-break is applied uniformly.
    """

    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    @classmethod
    def from_scores(cls, query_id: str, scored: list[tuple[str, float]], k: int | None = None) -> "RankedList":
        ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0]))
        if k is not None:
            ordered = ordered[:k]
        return cls(query_id=query_id, entries=ordered)

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def top(self, k: int) -> "RankedList":
        return RankedList(query_id=self.query_id, entries=self.entries[:k])
