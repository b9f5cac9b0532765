import json
import os

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapc import llm_gateway as gw
from mapc.llm_gateway import (
    ChatRequest,
    ConfigurationError,
    EmbeddingError,
    EmbeddingVector,
    GatewayTimeout,
    HttpChatClient,
    HttpStatusError,
    LlmSettings,
    MockChat,
    OfflineEmbedder,
    TransportError,
    cosine,
    embed,
)


def req(text="hi"):
    return ChatRequest("m", (("system", "be brief"), ("user", text)))


def test_mock_replays_queue():
    assert MockChat(["X"]).chat(req()) == "X"


def test_mock_timeout_after_three_attempts():
    sleeps = []
    client = MockChat(["never"], faults=[GatewayTimeout("slow")] * 3, sleep=sleeps.append)
    with pytest.raises(GatewayTimeout):
        client.chat(req())
    assert client.attempts_made == 3
    assert sleeps == [0.5, 1.0]


def test_mock_recovers_within_budget():
    client = MockChat(["ok"], faults=[TransportError("reset")] * 2)
    assert client.chat(req()) == "ok"
    assert client.attempts_made == 3


def test_client_errors_are_not_retried():
    client = MockChat(["ok"], faults=[HttpStatusError(400, "bad")])
    with pytest.raises(HttpStatusError):
        client.chat(req())
    assert client.attempts_made == 1


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        ChatRequest("m", (("user", "no system first"),))


def test_request_digest_stable():
    assert req("a").digest() == req("a").digest() != req("b").digest()


def test_transcript_records(tmp_path):
    t = gw.Transcript(tmp_path / "t.jsonl")
    MockChat(["X"], transcript=t).chat(req(), agent=1, round_index=4)
    rows = [json.loads(x) for x in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert rows[0]["response"] == "X" and rows[0]["agent"] == 1 and rows[0]["round"] == 4


# ---------------------------------------------------------------- HTTP client


def http_client(handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return HttpChatClient("http://llm.invalid", "k", transport=httpx.MockTransport(handler), **kw)


def test_http_chat_success_and_payload():
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "pong"}}]})

    assert http_client(handler).chat(req("ping")) == "pong"
    assert seen["path"] == "/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["messages"][1] == {"role": "user", "content": "ping"}
    assert seen["body"]["temperature"] == 0.2


def test_http_retries_rate_limit():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(429, text="slow down")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    assert http_client(handler).chat(req()) == "ok"
    assert len(calls) == 3


def test_http_timeout_is_typed():
    def handler(request):
        raise httpx.ReadTimeout("timed out", request=request)

    c = http_client(handler)
    with pytest.raises(GatewayTimeout):
        c.chat(req())
    assert c.attempts_made == 3


def test_http_malformed_completion():
    c = http_client(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(TransportError):
        c.chat(req())


def test_http_embeddings_sorted_by_index():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]})

    assert http_client(handler).embeddings("e", ["a", "b"]) == [[1, 0], [0, 1]]


def test_remote_embedder_normalizes():
    c = http_client(lambda r: httpx.Response(200, json={"data": [{"index": 0, "embedding": [3.0, 4.0]}]}))
    v = gw.RemoteEmbedder(c, "e").embed("x")
    np.testing.assert_allclose(v.values, [0.6, 0.8])


def test_settings_from_env():
    with pytest.raises(ConfigurationError):
        LlmSettings.from_env({})
    s = LlmSettings.from_env({"MAPC_LLM_BASE_URL": "http://x", "MAPC_LLM_MODEL": "m1"})
    assert (s.base_url, s.model, s.api_key) == ("http://x", "m1", None)
    assert isinstance(gw.embedder_from_settings(s, None), OfflineEmbedder)


@pytest.mark.skipif(not os.environ.get("MAPC_LIVE_LLM_URL"), reason="live endpoint smoke test; set MAPC_LIVE_LLM_URL")
def test_live_endpoint_smoke():  # pragma: no cover
    c = HttpChatClient(os.environ["MAPC_LIVE_LLM_URL"], os.environ.get("MAPC_LLM_API_KEY"))
    assert c.chat(ChatRequest(os.environ.get("MAPC_LLM_MODEL", "gpt-4o"), (("system", "reply with one word"), ("user", "hello"))))


# ---------------------------------------------------------------- embeddings


def test_embed_is_pure():
    a = embed("collision on slot three")
    b = OfflineEmbedder().embed("collision on slot three")
    np.testing.assert_array_equal(a.values, b.values)
    assert cosine(a, b) == pytest.approx(1.0, abs=1e-6)


def test_token_overlap_dominates_similarity():
    base = embed("collision slot three")
    assert cosine(base, embed("collision slot three peer")) > cosine(base, embed("all slots idle"))


def test_embed_rejects_empty():
    with pytest.raises(EmbeddingError):
        embed("   ")
    with pytest.raises(EmbeddingError):
        embed("!!!")


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(v, -v) == pytest.approx(-1.0)
    assert cosine([1, 0, 0], [0, 1, 0]) == 0.0
    with pytest.raises(ValueError):
        cosine([1, 0], [1, 0, 0])


@given(st.text(alphabet="abcdefgh xyz0123", min_size=1, max_size=40).filter(lambda t: any(c.isalnum() for c in t)))
def test_embedding_unit_norm_and_bounded_cosine(text):
    v = embed(text)
    assert v.dim == 256
    assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-9)
    assert -1.0 <= cosine(v, embed("slot collision idle")) <= 1.0


def test_embedding_vector_rejects_zero():
    with pytest.raises(EmbeddingError):
        EmbeddingVector(np.zeros(4))
