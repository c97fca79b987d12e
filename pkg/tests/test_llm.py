import threading

import pytest
from hypothesis import given, settings, strategies as st

from inter_ir.llm import (
    CacheMissError,
    CachingProvider,
    EmptyGenerationError,
    GenerationError,
    GenerationProvider,
    GenerationRequest,
    MockProvider,
    RateLimiter,
    ReplayProvider,
    TransportError,
    generate,
    mock_generate,
)


class FlakyProvider(GenerationProvider):
    """Fails with TransportError a fixed number of times, then succeeds."""

    tag = "flaky"

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0

    def sample(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError(f"boom {self.calls}")
        return [f"recovered passage {i}" for i in range(request.num_samples)]


class ScriptedProvider(GenerationProvider):
    """Returns canned passages; counts invocations (stands in for a live service)."""

    tag = "scripted"

    def __init__(self, passages):
        self.passages = passages
        self.calls = 0

    def sample(self, request):
        self.calls += 1
        return list(self.passages)


class TestGenerationRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", num_samples=0)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", max_tokens=0)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", temperature=-0.1)

    def test_frozen(self):
        request = GenerationRequest(prompt="p")
        with pytest.raises(AttributeError):
            request.prompt = "other"

    def test_cache_key_depends_on_params(self):
        a = GenerationRequest(prompt="p", num_samples=3)
        b = GenerationRequest(prompt="p", num_samples=4)
        assert a.cache_key() != b.cache_key()
        assert a.cache_key() == GenerationRequest(prompt="p", num_samples=3).cache_key()


class TestMockProvider:
    def test_deterministic(self):
        request = GenerationRequest(prompt="tell me about glaciers", num_samples=3, seed=5)
        first = mock_generate(request)
        second = mock_generate(request)
        assert first.passages == second.passages

    def test_seed_sensitivity(self):
        request = GenerationRequest(prompt="same prompt", num_samples=3)
        assert mock_generate(request, seed=1).passages != mock_generate(request, seed=2).passages

    def test_passages_embed_prompt_content_words(self):
        prompt = (
            "Please write a passage to answer the question.\n"
            "Question: what is the daily life of thai people\nPassage:"
        )
        collection = mock_generate(GenerationRequest(prompt=prompt, num_samples=5))
        for passage in collection.passages:
            lowered = passage.lower()
            assert "thai" in lowered
            assert "people" in lowered

    def test_samples_differ_from_each_other(self):
        collection = mock_generate(GenerationRequest(prompt="any prompt", num_samples=4))
        assert len(set(collection.passages)) == 4

    def test_provider_seed_used_when_request_has_none(self):
        request = GenerationRequest(prompt="p", num_samples=2)
        a = generate(MockProvider(seed=1), request)
        b = generate(MockProvider(seed=2), request)
        assert a.passages != b.passages


class TestGenerate:
    def test_empty_prompt_rejected(self):
        with pytest.raises(GenerationError):
            generate(MockProvider(), GenerationRequest(prompt="   "))

    def test_truncates_to_max_tokens(self):
        provider = ScriptedProvider([" ".join(f"w{i}" for i in range(500))])
        collection = generate(provider, GenerationRequest(prompt="p", num_samples=1, max_tokens=256))
        assert len(collection.passages[0].split()) == 256

    def test_drops_empty_samples(self):
        provider = ScriptedProvider(["good text", "   ", ""])
        collection = generate(provider, GenerationRequest(prompt="p", num_samples=3))
        assert collection.passages == ["good text"]

    def test_all_empty_is_error(self):
        provider = ScriptedProvider([""] * 10)
        with pytest.raises(EmptyGenerationError):
            generate(provider, GenerationRequest(prompt="p", num_samples=10))

    def test_retry_recovers_after_two_failures(self):
        provider = FlakyProvider(failures=2)
        collection = generate(provider, GenerationRequest(prompt="p", num_samples=2),
                              sleep=lambda _: None)
        assert provider.calls == 3
        assert len(collection.passages) == 2

    def test_four_failures_exhaust_retries(self):
        provider = FlakyProvider(failures=4)
        with pytest.raises(TransportError):
            generate(provider, GenerationRequest(prompt="p"), sleep=lambda _: None)
        assert provider.calls == 4

    def test_provider_tag_recorded(self):
        collection = mock_generate(GenerationRequest(prompt="p", num_samples=1))
        assert collection.provider_tag == "mock"

    @settings(max_examples=25, deadline=None)
    @given(
        prompt=st.text(min_size=1, max_size=80).filter(lambda s: s.strip()),
        h=st.integers(min_value=1, max_value=10),
        max_tokens=st.integers(min_value=1, max_value=300),
        seed=st.integers(min_value=0, max_value=10),
    )
    def test_no_passage_exceeds_word_limit(self, prompt, h, max_tokens, seed):
        request = GenerationRequest(prompt=prompt, num_samples=h,
                                    max_tokens=max_tokens, seed=seed)
        collection = mock_generate(request)
        assert len(collection.passages) <= h
        for passage in collection.passages:
            assert len(passage.split()) <= max_tokens


class TestCache:
    def test_caching_provider_replays(self, tmp_path):
        cache_path = tmp_path / "cache.jsonl"
        inner = ScriptedProvider(["alpha text", "beta text"])
        provider = CachingProvider(inner, cache_path)
        request = GenerationRequest(prompt="p", num_samples=2)
        first = generate(provider, request)
        second = generate(provider, request)
        assert inner.calls == 1
        assert first.passages == second.passages

    def test_replay_provider_reads_cache(self, tmp_path):
        cache_path = tmp_path / "cache.jsonl"
        request = GenerationRequest(prompt="p", num_samples=2)
        generate(CachingProvider(ScriptedProvider(["a1", "a2"]), cache_path), request)
        replayed = generate(ReplayProvider(cache_path), request)
        assert replayed.passages == ["a1", "a2"]

    def test_replay_miss_is_error(self, tmp_path):
        cache_path = tmp_path / "cache.jsonl"
        generate(CachingProvider(ScriptedProvider(["x"]), cache_path),
                 GenerationRequest(prompt="p", num_samples=1))
        with pytest.raises(CacheMissError):
            generate(ReplayProvider(cache_path), GenerationRequest(prompt="other", num_samples=1))

    def test_missing_cache_file(self, tmp_path):
        with pytest.raises(CacheMissError):
            ReplayProvider(tmp_path / "absent.jsonl")

    def test_concurrent_cache_writes(self, tmp_path):
        cache_path = tmp_path / "cache.jsonl"
        provider = CachingProvider(MockProvider(seed=1), cache_path)

        def work(i):
            generate(provider, GenerationRequest(prompt=f"prompt {i}", num_samples=2))

        threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        lines = cache_path.read_text().strip().splitlines()
        assert len(lines) == 8


class TestRateLimiter:
    def test_validation(self):
        with pytest.raises(ValueError):
            RateLimiter(0)

    def test_spaces_requests(self):
        import time

        limiter = RateLimiter(requests_per_minute=60 * 50)  # 20 ms interval
        start = time.monotonic()
        for _ in range(3):
            limiter.acquire()
        assert time.monotonic() - start >= 0.03
