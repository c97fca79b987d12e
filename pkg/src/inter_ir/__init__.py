"""Iterative retrieval/LLM refinement toolkit.

Sparse (BM25) and dense (inner product) retrieval over desk-scale corpora,
query expansion from generated knowledge passages, the iterative refinement
loop between the two, and TREC-style evaluation.
"""

__version__ = "0.1.0"
