"""Wire-format tests for the two HTTP contracts, against a local stub server."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from inter_ir.dense import EmbeddingError, HttpEmbedder
from inter_ir.llm import (
    AuthenticationError,
    GenerationRequest,
    OpenAiCompatProvider,
    TransportError,
    generate,
)


class StubHandler(BaseHTTPRequestHandler):
    server_version = "stub"

    def log_message(self, *args):
        pass

    def _read_json(self):
        length = int(self.headers["Content-Length"])
        return json.loads(self.rfile.read(length))

    def _send(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        state = self.server.state
        state["requests"].append({
            "path": self.path,
            "auth": self.headers.get("Authorization"),
            "body": self._read_json(),
        })
        if state["fail_next"] > 0:
            state["fail_next"] -= 1
            self._send(500, {"error": "induced failure"})
            return
        if state.get("reject_auth"):
            self._send(401, {"error": "bad key"})
            return
        body = state["requests"][-1]["body"]
        if self.path == "/embed":
            vectors = [[float(len(text)), float(text.count("a"))] for text in body["texts"]]
            self._send(200, {"vectors": vectors})
        elif self.path == "/v1/chat/completions":
            n = body.get("n", 1)
            prompt = body["messages"][0]["content"]
            choices = [
                {"message": {"content": f"reply {i} to {prompt.split()[0]}"}}
                for i in range(n)
            ]
            self._send(200, {"choices": choices})
        else:
            self._send(404, {"error": "unknown path"})


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    server.state = {"requests": [], "fail_next": 0, "reject_auth": False}
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    thread.join()


def _base_url(server) -> str:
    return f"http://127.0.0.1:{server.server_address[1]}"


class TestEmbeddingService:
    def test_request_and_response_shape(self, stub_server):
        embedder = HttpEmbedder(f"{_base_url(stub_server)}/embed", api_key="sekrit")
        matrix = embedder.encode(["abc", "aa"], role="query")
        assert np.array_equal(matrix, np.array([[3.0, 1.0], [2.0, 2.0]]))
        request = stub_server.state["requests"][0]
        assert request["body"] == {"texts": ["abc", "aa"], "role": "query"}
        assert request["auth"] == "Bearer sekrit"
        assert embedder.dim == 2

    def test_batching_preserves_order(self, stub_server):
        embedder = HttpEmbedder(f"{_base_url(stub_server)}/embed", batch_size=2)
        texts = [f"{'a' * i}" or "x" for i in range(1, 6)]
        matrix = embedder.encode(texts, role="document")
        assert matrix.shape == (5, 2)
        assert [r["body"]["texts"] for r in stub_server.state["requests"]] == [
            texts[0:2], texts[2:4], texts[4:5],
        ]

    def test_service_error_raises(self, stub_server):
        stub_server.state["fail_next"] = 1
        embedder = HttpEmbedder(f"{_base_url(stub_server)}/embed")
        with pytest.raises(EmbeddingError):
            embedder.encode(["x"], role="query")

    def test_unreachable_service(self):
        embedder = HttpEmbedder("http://127.0.0.1:9/embed", timeout=0.2)
        with pytest.raises(EmbeddingError):
            embedder.encode(["x"], role="query")

    def test_dim_mismatch_across_calls(self, stub_server):
        embedder = HttpEmbedder(f"{_base_url(stub_server)}/embed", dim=7)
        with pytest.raises(EmbeddingError, match="dim"):
            embedder.encode(["x"], role="query")

    def test_from_env(self, stub_server, monkeypatch):
        monkeypatch.setenv("INTER_EMBED_URL", f"{_base_url(stub_server)}/embed")
        monkeypatch.setenv("INTER_EMBED_KEY", "envkey")
        embedder = HttpEmbedder.from_env()
        embedder.encode(["x"], role="query")
        assert stub_server.state["requests"][0]["auth"] == "Bearer envkey"


class TestChatCompletions:
    def _provider(self, server, **kwargs) -> OpenAiCompatProvider:
        return OpenAiCompatProvider(f"{_base_url(server)}/v1", api_key="k",
                                    model="test-model", **kwargs)

    def test_h_samples_via_n(self, stub_server):
        provider = self._provider(stub_server)
        request = GenerationRequest(prompt="hello world", num_samples=4,
                                    temperature=0.7, frequency_penalty=0.1, max_tokens=64)
        collection = generate(provider, request)
        assert len(collection.passages) == 4
        body = stub_server.state["requests"][0]["body"]
        assert body["model"] == "test-model"
        assert body["n"] == 4
        assert body["temperature"] == 0.7
        assert body["frequency_penalty"] == 0.1
        assert body["max_tokens"] == 64
        assert body["messages"] == [{"role": "user", "content": "hello world"}]

    def test_sequential_calls_when_n_unsupported(self, stub_server):
        provider = self._provider(stub_server, supports_n=False)
        collection = generate(provider, GenerationRequest(prompt="p", num_samples=3))
        assert len(stub_server.state["requests"]) == 3
        assert all(r["body"]["n"] == 1 for r in stub_server.state["requests"])
        assert len(collection.passages) == 3

    def test_retry_recovers_from_transient_500(self, stub_server):
        stub_server.state["fail_next"] = 2
        provider = self._provider(stub_server)
        collection = generate(provider, GenerationRequest(prompt="p", num_samples=2),
                              sleep=lambda _: None)
        assert len(collection.passages) == 2
        assert len(stub_server.state["requests"]) == 3

    def test_persistent_500_exhausts_retries(self, stub_server):
        stub_server.state["fail_next"] = 10
        provider = self._provider(stub_server)
        with pytest.raises(TransportError):
            generate(provider, GenerationRequest(prompt="p"), sleep=lambda _: None)
        assert len(stub_server.state["requests"]) == 4  # 1 + 3 retries

    def test_auth_rejection_not_retried(self, stub_server):
        stub_server.state["reject_auth"] = True
        provider = self._provider(stub_server)
        with pytest.raises(AuthenticationError):
            generate(provider, GenerationRequest(prompt="p"), sleep=lambda _: None)
        assert len(stub_server.state["requests"]) == 1

    def test_from_env(self, stub_server, monkeypatch):
        monkeypatch.setenv("INTER_LLM_URL", f"{_base_url(stub_server)}/v1")
        monkeypatch.setenv("INTER_LLM_KEY", "envk")
        monkeypatch.setenv("INTER_LLM_MODEL", "env-model")
        provider = OpenAiCompatProvider.from_env()
        generate(provider, GenerationRequest(prompt="p", num_samples=1))
        request = stub_server.state["requests"][0]
        assert request["auth"] == "Bearer envk"
        assert request["body"]["model"] == "env-model"
