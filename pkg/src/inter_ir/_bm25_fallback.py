"""Pure-numpy twin of the compiled BM25 kernel.

Used when the extension is absent or INTER_PURE_PYTHON=1. Expression
structure matches _bm25_kernel.pyx term for term so the two backends produce
bitwise-identical scores (doc indices are unique within one term's slice,
which makes the fancy-indexed += safe).
"""

from __future__ import annotations

import numpy as np


def score_postings(offsets, doc_indices, term_freqs, term_weights, k1, length_norms, scores):
    k1p1 = k1 + 1.0
    for t in range(term_weights.shape[0]):
        lo, hi = offsets[t], offsets[t + 1]
        idx = doc_indices[lo:hi]
        tf = term_freqs[lo:hi]
        scores[idx] += (term_weights[t] * (tf * k1p1)) / (tf + length_norms[idx])
