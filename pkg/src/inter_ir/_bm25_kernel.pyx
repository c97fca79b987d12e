# cython: boundscheck=False, wraparound=False, cdivision=True
"""BM25 score accumulation over concatenated postings lists.

This is the hot loop of sparse retrieval: expanded queries carry thousands of
unique terms, each with its own postings slice. The pure-numpy twin lives in
_bm25_fallback.py; both must produce bitwise-identical scores, so the
arithmetic here mirrors its expression structure exactly.
"""

cimport numpy as cnp


def score_postings(cnp.int64_t[::1] offsets,
                   cnp.int32_t[::1] doc_indices,
                   cnp.float64_t[::1] term_freqs,
                   cnp.float64_t[::1] term_weights,
                   double k1,
                   cnp.float64_t[::1] length_norms,
                   cnp.float64_t[::1] scores):
    """Accumulate weights[t] * tf*(k1+1) / (tf + norm[d]) into scores.

    offsets[t]:offsets[t+1] delimits term t's slice of the concatenated
    doc_indices / term_freqs arrays; length_norms[d] = k1*(1-b+b*len_d/avg).
    """
    cdef Py_ssize_t t, j
    cdef Py_ssize_t n_terms = term_weights.shape[0]
    cdef double w, tf
    cdef double k1p1 = k1 + 1.0
    cdef cnp.int32_t d
    with nogil:
        for t in range(n_terms):
            w = term_weights[t]
            for j in range(offsets[t], offsets[t + 1]):
                d = doc_indices[j]
                tf = term_freqs[j]
                scores[d] += (w * (tf * k1p1)) / (tf + length_norms[d])
