import json
import time
from pathlib import Path

import numpy as np
import pytest

from trajforge.backends import (
    BackendError,
    CallCounter,
    ChatRequest,
    HttpBackend,
    ScriptedBackend,
    chat_request_body,
)
from trajforge.embed import RemoteEmbedder

from mock_server import MockOpenAI, start_mock

GOLDEN = Path(__file__).parent / "goldens"


@pytest.fixture
def mock():
    m = MockOpenAI()
    server, base_url = start_mock(m)
    yield m, base_url
    server.shutdown()


def fixed_request():
    return ChatRequest(system="system text", user="user text")


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(system="", user="u")
    with pytest.raises(ValueError):
        ChatRequest(system="s", user="")


def test_request_body_matches_golden():
    body = chat_request_body(fixed_request(), model="test-model")
    golden = json.loads((GOLDEN / "chat_request.json").read_text())
    assert body == golden
    # serialized form is stable too
    assert json.dumps(body, sort_keys=True) == json.dumps(golden, sort_keys=True)


def test_default_temperature_is_on_the_wire(mock):
    m, base_url = mock
    backend = HttpBackend(base_url, "test-model", backoff_base=0.0)
    backend.complete(fixed_request(), "reason")
    assert m.requests[0]["temperature"] == 0.1
    assert m.requests[0]["max_tokens"] == 512
    assert m.requests[0]["stop"] == ["\nObservation:", "\ngoal:"]


def test_http_passthrough(mock):
    m, base_url = mock
    m.script = [(200, MockOpenAI.chat_payload("take the lamp"))]
    backend = HttpBackend(base_url, "test-model", backoff_base=0.0)
    assert backend.complete(fixed_request(), "act") == "take the lamp"
    assert m.paths == ["/chat/completions"]
    messages = m.requests[0]["messages"]
    assert messages[0] == {"role": "system", "content": "system text"}
    assert messages[1] == {"role": "user", "content": "user text"}


def test_http_retries_on_503_then_succeeds(mock):
    m, base_url = mock
    m.script = [(503, {}), (503, {}), (200, MockOpenAI.chat_payload("recovered"))]
    backend = HttpBackend(base_url, "test-model", backoff_base=0.0)
    assert backend.complete(fixed_request()) == "recovered"
    assert len(m.requests) == 3


def test_http_backoff_delays_grow(mock):
    m, base_url = mock
    m.script = [(503, {}), (503, {}), (200, MockOpenAI.chat_payload("ok"))]
    backend = HttpBackend(base_url, "test-model", backoff_base=0.05)
    started = time.monotonic()
    backend.complete(fixed_request())
    # two retries: 0.05 + 0.1 of sleep at minimum
    assert time.monotonic() - started >= 0.15


def test_http_gives_up_after_three_retries(mock):
    m, base_url = mock
    m.script = [(503, {})]
    backend = HttpBackend(base_url, "test-model", retries=3, backoff_base=0.0)
    with pytest.raises(BackendError, match="after 3 retries"):
        backend.complete(fixed_request())
    assert len(m.requests) == 4  # initial try plus three retries


def test_http_4xx_is_fatal_immediately(mock):
    m, base_url = mock
    m.script = [(400, {"error": "bad request"})]
    backend = HttpBackend(base_url, "test-model", backoff_base=0.0)
    with pytest.raises(BackendError, match="rejected"):
        backend.complete(fixed_request())
    assert len(m.requests) == 1


def test_call_counter_partitions_by_phase(mock):
    m, base_url = mock
    counter = CallCounter()
    backend = HttpBackend(base_url, "test-model", backoff_base=0.0, counter=counter)
    backend.complete(fixed_request(), "plan")
    backend.complete(fixed_request(), "reason")
    backend.complete(fixed_request(), "reason")
    backend.complete(fixed_request(), "act")
    assert counter.counts == {"plan": 1, "reason": 2, "act": 1}
    assert counter.total() == 4


def test_scripted_backend_is_deterministic():
    req = ChatRequest(
        system="Here are some examples of goal,plan from episodes that successfully "
               "achieved similar goals: ",
        user="goal: Create the element steam. You have: fire, water.\n plan: ")
    a = ScriptedBackend(seed=5).complete(req, "plan")
    b = ScriptedBackend(seed=5).complete(req, "plan")
    assert a == b
    assert "steam" in a


def test_remote_embedder_batching_and_dimension_pinning(mock):
    m, base_url = mock
    m.script = [(200, MockOpenAI.embedding_payload([[3.0, 4.0], [0.0, 2.0]]))]
    embedder = RemoteEmbedder(base_url, "embed-model", backoff_base=0.0)
    out = embedder.embed_batch(["alpha", "beta"], "goal")
    assert m.paths == ["/embeddings"]
    assert m.requests[0] == {"model": "embed-model", "input": ["alpha", "beta"]}
    # vectors come back normalized and the dimension is pinned
    assert np.allclose(out[0], [0.6, 0.8])
    assert embedder.dim == 2
    m.script = [(200, MockOpenAI.embedding_payload([[1.0, 0.0, 0.0]]))]
    with pytest.raises(RuntimeError, match="dimension changed"):
        embedder.embed("gamma", "goal")


def test_remote_embedder_retries_then_fails(mock):
    m, base_url = mock
    m.script = [(503, {})]
    embedder = RemoteEmbedder(base_url, "embed-model", retries=2, backoff_base=0.0)
    with pytest.raises(RuntimeError, match="after 2 retries"):
        embedder.embed("alpha", "goal")
    assert len(m.requests) == 3


def test_remote_embedder_malformed_response_is_fatal(mock):
    m, base_url = mock
    m.script = [(200, {"data": "not-a-list"})]
    embedder = RemoteEmbedder(base_url, "embed-model", backoff_base=0.0)
    with pytest.raises(RuntimeError, match="malformed"):
        embedder.embed("alpha", "goal")
