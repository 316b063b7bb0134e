import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from scenesynth.errors import BudgetExhausted, GatewayTimeout, SchemaError, TransportError, UnknownRole
from scenesynth.gateway import (
    GatewayConfig,
    LiveGateway,
    MockGateway,
    StructuredRequest,
    build_messages,
    extract_json,
    mock_backend,
    send,
    validate,
)

REPLIES = Path(__file__).parent / "fixtures" / "replies"
VERDICT = {"score": 0.9, "rationale": "seated", "view_index": 0}


def judge_request():
    return StructuredRequest("judge", "Is the cup on the table?", "JudgeVerdict")


def envelope(content: str) -> str:
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})


class Scripted:
    """Transport that replays (status, content) pairs and records every call."""

    def __init__(self, *script):
        self.script = list(script)
        self.calls = []

    def __call__(self, url, headers, body, timeout):
        self.calls.append(body)
        item = self.script.pop(0)
        if isinstance(item, BaseException):
            raise item
        status, content = item
        return status, envelope(content) if status == 200 else "error"


def gateway(transport, sleeps=None, **cfg):
    sleeps = sleeps if sleeps is not None else []
    return LiveGateway(GatewayConfig(**cfg), transport=transport, sleep=sleeps.append)


def reference_extract(text):
    """First position where a JSON object decodes, scanning left to right."""
    dec = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch == "{":
            try:
                obj, _ = dec.raw_decode(text, i)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    raise ValueError("none")


def fixture_names():
    return sorted(p.name for p in REPLIES.glob("*.txt"))


def test_fixture_corpus_size():
    assert len(fixture_names()) == 20


@pytest.mark.parametrize("name", fixture_names())
def test_extraction_matches_reference(name):
    text = (REPLIES / name).read_text(encoding="utf-8")
    expected = json.loads((REPLIES / "expected.json").read_text(encoding="utf-8"))[name]
    assert extract_json(text) == expected == reference_extract(text)


def test_extract_no_object():
    with pytest.raises(SchemaError):
        extract_json("no json here [1, 2]")


def test_request_body_shape():
    t = Scripted((200, json.dumps(VERDICT)))
    assert gateway(t, model="m1").send(judge_request()) == VERDICT
    body = t.calls[0]
    assert body["model"] == "m1" and body["temperature"] == 0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]


def test_429_then_200():
    sleeps = []
    t = Scripted((429, ""), (200, json.dumps(VERDICT)))
    g = gateway(t, sleeps)
    assert g.send(judge_request()) == VERDICT
    assert len(t.calls) == 2 and len(sleeps) == 1 and sleeps[0] >= 0.5


def test_backoff_grows_geometrically():
    g = gateway(Scripted(), backoff_base_ms=100, backoff_factor=3)
    for k in range(4):
        d = g.backoff_delay(k)
        base = 0.1 * 3**k
        assert base <= d <= 2 * base


def test_attempts_capped():
    t = Scripted(*[(503, "")] * 10)
    with pytest.raises(TransportError) as exc:
        gateway(t, max_attempts=3).send(judge_request())
    assert len(t.calls) == 3 and len(exc.value.attempts) == 3


def test_non_retryable_status():
    t = Scripted((400, ""), (200, json.dumps(VERDICT)))
    with pytest.raises(TransportError):
        gateway(t).send(judge_request())
    assert len(t.calls) == 1


def test_timeouts():
    t = Scripted(*[TimeoutError("slow")] * 2)
    with pytest.raises(GatewayTimeout):
        gateway(t, max_attempts=2).send(judge_request())


def test_repair_round_trip():
    t = Scripted((200, "I think it's fine."), (200, "fixed: " + json.dumps(VERDICT)))
    assert gateway(t).send(judge_request()) == VERDICT
    repair = t.calls[1]["messages"]
    assert repair[-1]["role"] == "user" and "failed validation" in repair[-1]["content"]


def test_schema_error_after_one_repair():
    bad = json.dumps({"score": 3.0, "rationale": "x"})
    t = Scripted((200, bad), (200, bad), (200, json.dumps(VERDICT)))
    with pytest.raises(SchemaError):
        gateway(t).send(judge_request())
    assert len(t.calls) == 2


def test_budget_enforced_before_dispatch():
    t = Scripted(*[(200, json.dumps(VERDICT))] * 3)
    g = gateway(t, request_budget=2)
    g.send(judge_request())
    g.send(judge_request())
    with pytest.raises(BudgetExhausted):
        g.send(judge_request())
    assert len(t.calls) == 2 and g.requests_made == 2


def test_inflight_bounded():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def slow(url, headers, body, timeout):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.01)
        with lock:
            state["now"] -= 1
        return 200, envelope(json.dumps(VERDICT))

    g = LiveGateway(GatewayConfig(max_inflight=2), transport=slow)
    threads = [threading.Thread(target=g.send, args=(judge_request(),)) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert state["peak"] <= 2 and g.max_inflight_seen <= 2 and g.requests_made == 8


def test_send_function():
    t = Scripted((200, json.dumps(VERDICT)))
    assert send(GatewayConfig(), judge_request(), transport=t) == VERDICT


def test_config_invariants():
    for bad in ({"max_attempts": 0}, {"timeout_s": 0}, {"backoff_factor": 0.5}):
        with pytest.raises(ValueError):
            GatewayConfig(**bad)


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("FYI_LLM_ENDPOINT", "http://example.invalid/v1")
    monkeypatch.setenv("FYI_LLM_MODEL", "m2")
    monkeypatch.setenv("FYI_LLM_API_KEY", "k")
    c = GatewayConfig.from_env()
    assert (c.endpoint, c.model, c.api_key) == ("http://example.invalid/v1", "m2", "k")


def test_request_validation():
    with pytest.raises(UnknownRole):
        StructuredRequest("painter", "x", "JudgeVerdict")
    with pytest.raises(SchemaError):
        StructuredRequest("judge", "x", "Nope")


def test_attachments_downscaled():
    img = np.zeros((600, 1200, 3), dtype=np.uint8)
    req = StructuredRequest("judge", "x", "JudgeVerdict", attachments=[img])
    msgs = build_messages(req)
    parts = msgs[1]["content"]
    assert parts[0]["type"] == "text" and parts[1]["type"] == "image_url"
    import base64
    import io

    from PIL import Image

    data = base64.b64decode(parts[1]["image_url"]["url"].split(",", 1)[1])
    assert max(Image.open(io.BytesIO(data)).size) == 512


def test_validate_rejects():
    with pytest.raises(SchemaError):
        validate({"score": -0.1, "rationale": ""}, "JudgeVerdict")


def test_mock_deterministic():
    req = StructuredRequest("collector", "", "SceneDecomposition", context={"instruction": "a mug near the laptop"})
    a = json.dumps(MockGateway(5).send(req), sort_keys=True)
    b = json.dumps(MockGateway(5).send(req), sort_keys=True)
    assert a == b


def test_mock_near_rule():
    req = StructuredRequest("collector", "", "SceneDecomposition", context={"instruction": "a mug near the laptop"})
    (c,) = MockGateway().send(req)["sub_scenes"][0]["constraints"]
    assert (c["predicate"], c["subject"], c["reference"], c["param"]) == ("near", "mug", "laptop", 0.3)


def test_mock_backend_roles():
    with pytest.raises(UnknownRole):
        mock_backend("painter")
    judge_only = mock_backend("judge")
    with pytest.raises(UnknownRole):
        judge_only.send(StructuredRequest("collector", "", "SceneDecomposition", context={"instruction": "a cup"}))
