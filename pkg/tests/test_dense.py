import random

import numpy as np
import pytest

from inter_ir.corpus import Corpus, Document
from inter_ir.dense import (
    EmbeddingError,
    FileBackedEmbedder,
    MockHashEmbedder,
    VectorIndex,
    build_vector_index,
    dense_search,
    dense_search_vector,
    expanded_query_vector,
    load_vectors,
    save_vectors,
    save_vectors_jsonl,
)

from oracles import brute_force_inner_product, rank_scores


def random_index(rng: random.Random, max_docs: int = 200, max_dim: int = 32) -> VectorIndex:
    num_docs = rng.randint(1, max_docs)
    dim = rng.randint(1, max_dim)
    matrix = np.array(
        [[rng.uniform(-1, 1) for _ in range(dim)] for _ in range(num_docs)],
        dtype=np.float64,
    )
    return VectorIndex([f"d{i:04d}" for i in range(num_docs)], matrix)


class TestMockHashEmbedder:
    def test_deterministic(self):
        emb = MockHashEmbedder(dim=16)
        a = emb.encode(["some text here"], "query")
        b = emb.encode(["some text here"], "query")
        assert np.array_equal(a, b)

    def test_discriminates(self):
        emb = MockHashEmbedder(dim=8)
        a = emb.encode_one("a", "query")
        b = emb.encode_one("b", "query")
        assert not np.array_equal(a, b)

    def test_l2_normalized(self):
        emb = MockHashEmbedder(dim=32)
        vec = emb.encode_one("several words of text", "document")
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_empty_text_zero_vector(self):
        emb = MockHashEmbedder(dim=8)
        assert np.array_equal(emb.encode_one("   ", "query"), np.zeros(8))

    def test_documented_bucket_algorithm(self):
        # Bucket = first 8 bytes of sha256(token) mod dim; sign from the low
        # bit of digest byte 8.
        import hashlib

        emb = MockHashEmbedder(dim=8)
        digest = hashlib.sha256(b"cat").digest()
        bucket = int.from_bytes(digest[:8], "big") % 8
        sign = 1.0 if digest[8] & 1 == 0 else -1.0
        vec = emb.encode_one("cat", "document")
        expected = np.zeros(8)
        expected[bucket] = sign
        assert np.array_equal(vec, expected)


class TestFileBackedEmbedder:
    def test_lookup_verbatim(self):
        table = {"d1": np.array([1.0, 2.0, 3.0]), "d2": np.array([0.5, 0.0, -1.0])}
        emb = FileBackedEmbedder(table)
        assert np.array_equal(emb.encode(["d2"], "document")[0], table["d2"])

    def test_missing_id(self):
        emb = FileBackedEmbedder({"d1": np.array([1.0])})
        with pytest.raises(EmbeddingError, match="ghost"):
            emb.encode(["ghost"], "query")

    def test_inconsistent_dims_rejected(self):
        with pytest.raises(EmbeddingError):
            FileBackedEmbedder({"a": np.array([1.0]), "b": np.array([1.0, 2.0])})


class TestBuildVectorIndex:
    def test_shape(self):
        corpus = Corpus([Document(f"d{i}", None, f"text {i}") for i in range(3)])
        vindex = build_vector_index(corpus, MockHashEmbedder(dim=4))
        assert vindex.matrix.shape == (3, 4)
        assert vindex.doc_ids == ["d0", "d1", "d2"]

    def test_empty_corpus(self):
        vindex = build_vector_index(Corpus([]), MockHashEmbedder(dim=16))
        assert vindex.matrix.shape == (0, 16)

    def test_rebuild_identical(self):
        corpus = Corpus([Document(f"d{i}", None, f"words w{i} here") for i in range(5)])
        emb = MockHashEmbedder(dim=8)
        a = build_vector_index(corpus, emb)
        b = build_vector_index(corpus, emb)
        assert np.array_equal(a.matrix, b.matrix)

    def test_file_backed_uses_ids(self):
        corpus = Corpus([Document("d1", None, "x"), Document("d2", None, "y")])
        table = {"d1": np.array([1.0, 0.0]), "d2": np.array([0.0, 1.0])}
        vindex = build_vector_index(corpus, FileBackedEmbedder(table))
        assert np.array_equal(vindex.matrix, np.array([[1.0, 0.0], [0.0, 1.0]]))

    def test_file_backed_missing_doc_names_id(self):
        corpus = Corpus([Document("d1", None, "x"), Document("dX", None, "y")])
        with pytest.raises(EmbeddingError, match="dX"):
            build_vector_index(corpus, FileBackedEmbedder({"d1": np.array([1.0])}))


class TestDenseSearch:
    def test_one_hot(self):
        matrix = np.eye(3)
        vindex = VectorIndex(["a", "b", "c"], matrix)
        result = dense_search_vector(vindex, np.array([1.0, 0.0, 0.0]), 1)
        assert result.entries == [("a", 1.0)]

    def test_full_permutation(self):
        rng = random.Random(2)
        vindex = random_index(rng, max_docs=20, max_dim=8)
        query = np.array([rng.uniform(-1, 1) for _ in range(vindex.dim)])
        result = dense_search_vector(vindex, query, vindex.num_docs)
        assert sorted(result.doc_ids()) == sorted(vindex.doc_ids)

    def test_matches_brute_force(self):
        rng = random.Random(9)
        vindex = random_index(rng, max_docs=20, max_dim=8)
        query = [rng.uniform(-1, 1) for _ in range(vindex.dim)]
        doc_vectors = {d: list(vindex.matrix[i]) for i, d in enumerate(vindex.doc_ids)}
        expected = rank_scores(brute_force_inner_product(doc_vectors, query), keep_zero=True)
        got = dense_search_vector(vindex, np.array(query), vindex.num_docs)
        assert got.doc_ids() == [d for d, _ in expected]
        for (_, got_score), (_, want_score) in zip(got.entries, expected):
            assert got_score == pytest.approx(want_score, rel=1e-6)

    def test_prefix_property(self):
        rng = random.Random(4)
        vindex = random_index(rng, max_docs=50, max_dim=8)
        query = np.array([rng.uniform(-1, 1) for _ in range(vindex.dim)])
        full = dense_search_vector(vindex, query, vindex.num_docs)
        for k in (1, 3, 10):
            assert dense_search_vector(vindex, query, k).entries == full.entries[:k]

    def test_dim_mismatch(self):
        vindex = VectorIndex(["a"], np.ones((1, 4)))
        with pytest.raises(EmbeddingError):
            dense_search_vector(vindex, np.ones(5), 1)

    def test_search_by_text(self):
        corpus = Corpus([Document("d1", None, "apple banana"), Document("d2", None, "car truck")])
        emb = MockHashEmbedder(dim=32)
        vindex = build_vector_index(corpus, emb)
        assert dense_search(vindex, emb, "apple", 1).doc_ids() == ["d1"]


class TestExpandedQueryVector:
    def test_chunk_mean_is_mean_of_pair_encodings(self):
        emb = MockHashEmbedder(dim=16)
        passages = ["first passage text", "second passage words"]
        got = expanded_query_vector(emb, "query terms", passages, policy="chunk-mean")
        pairs = emb.encode([f"query terms {p}" for p in passages], "query")
        assert np.allclose(got, pairs.mean(axis=0))

    def test_whole_policy_encodes_interleaved_string(self):
        emb = MockHashEmbedder(dim=16)
        got = expanded_query_vector(emb, "q", ["s1", "s2"], policy="whole")
        assert np.allclose(got, emb.encode_one("q s1 q s2", "query"))

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            expanded_query_vector(MockHashEmbedder(4), "q", ["s"], policy="bogus")


class TestVectorFiles:
    def test_binary_round_trip(self, tmp_path):
        rng = random.Random(6)
        vindex = random_index(rng, max_docs=10, max_dim=6)
        path = tmp_path / "v.vec"
        vindex.save(path)
        loaded = VectorIndex.load(path)
        assert loaded.doc_ids == vindex.doc_ids
        assert np.array_equal(loaded.matrix, vindex.matrix)

    def test_jsonl_interchange(self, tmp_path):
        ids = ["a", "b"]
        matrix = np.array([[1.5, -2.0], [0.25, 3.0]])
        path = tmp_path / "v.jsonl"
        save_vectors_jsonl(path, ids, matrix)
        loaded_ids, loaded = load_vectors(path)
        assert loaded_ids == ids
        assert np.array_equal(loaded, matrix)

    def test_unsupported_version(self, tmp_path):
        import struct

        path = tmp_path / "v.vec"
        path.write_bytes(b"INTERVEC" + struct.pack("<I", 99) + b"\x00" * 12)
        with pytest.raises(EmbeddingError):
            load_vectors(path)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            VectorIndex(["a"], np.array([[np.nan, 1.0]]))
