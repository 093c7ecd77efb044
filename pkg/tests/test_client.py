import base64
import json
import threading

import httpx
import pytest
from helpers import make_png
from hypothesis import given, settings
from hypothesis import strategies as st

from audit5s.client import (
    BackendProfile,
    BackendRequest,
    ClientConfig,
    ConfigError,
    ConnectivityError,
    DispatchGate,
    Fail,
    FakeClock,
    HttpBackend,
    ImageNotFound,
    MockBackend,
    Reply,
    RequestTimeout,
    RetriesExhausted,
    StatusError,
    UnsupportedImageFormat,
    encode_image,
    evaluate_image,
    parse_script,
)
from audit5s.engine import parse_response

REQ = BackendRequest("prompt", "cGF5bG9hZA==", "image/png")


def fast_config(**kw):
    kw.setdefault("inter_request_delay", 3.0)
    return ClientConfig(**kw)


# -- encoding -----------------------------------------------------------------


def test_encode_canonical_vector(tmp_path):
    p = tmp_path / "man.bin"
    p.write_bytes(b"Man")
    assert encode_image(p, media_type="image/png") == ("TWFu", "image/png")


def test_encode_empty_file_unsupported(tmp_path):
    p = tmp_path / "empty.png"
    p.write_bytes(b"")
    with pytest.raises(UnsupportedImageFormat):
        encode_image(p)


def test_encode_missing_file(tmp_path):
    with pytest.raises(ImageNotFound):
        encode_image(tmp_path / "nope.png")


def test_encode_png_round_trip(tmp_path):
    data = make_png(1, size=1)
    p = tmp_path / "one.png"
    p.write_bytes(data)
    payload, media = encode_image(p)
    assert media == "image/png"
    assert base64.b64decode(payload, validate=True) == data


def test_encode_detects_jpeg_by_magic_not_extension(tmp_path):
    p = tmp_path / "photo.png"
    p.write_bytes(b"\xff\xd8\xff\xe0rest")
    assert encode_image(p)[1] == "image/jpeg"
    q = tmp_path / "fake.jpg"
    q.write_bytes(b"GIF89a....")
    with pytest.raises(UnsupportedImageFormat):
        encode_image(q)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=2048))
def test_base64_round_trip_any_bytes(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("b64") / "blob"
    p.write_bytes(data)
    payload, _ = encode_image(p, media_type="image/jpeg")
    assert base64.b64decode(payload) == data


# -- retry loop and gate --------------------------------------------------------


def test_two_failures_then_success():
    clock = FakeClock()
    backend = MockBackend(script=[Fail(), Fail("timeout"), "UTILIZACAO: 4"], clock=clock)
    resp, attempts = evaluate_image(REQ, fast_config(max_retries=3), backend, DispatchGate(clock))
    assert attempts == 3 and resp.text == "UTILIZACAO: 4"


def test_always_failing_exhausts_after_four_attempts():
    clock = FakeClock()
    backend = MockBackend(script=[Fail("status", 503)] * 10, clock=clock)
    with pytest.raises(RetriesExhausted) as info:
        evaluate_image(REQ, fast_config(max_retries=3), backend, DispatchGate(clock))
    assert info.value.attempts == 4 and backend.calls == 4
    assert isinstance(info.value.last_cause, StatusError) and info.value.last_cause.status == 503


def test_bad_config_is_preflight_error():
    backend = MockBackend()
    with pytest.raises(ConfigError):
        evaluate_image(REQ, ClientConfig(max_retries=-1), backend, DispatchGate(FakeClock()))
    with pytest.raises(ConfigError):
        evaluate_image(REQ, ClientConfig(inter_request_delay=-1), backend, DispatchGate(FakeClock()))
    assert backend.calls == 0


def test_parse_failures_are_not_retried():
    clock = FakeClock()
    backend = MockBackend(script=["hello"], clock=clock)
    resp, attempts = evaluate_image(REQ, fast_config(), backend, DispatchGate(clock))
    assert attempts == 1 and resp.text == "hello"
    assert len(parse_response(resp.text).defaulted) == 5


def test_slow_reply_counts_as_timeout():
    clock = FakeClock()
    backend = MockBackend(script=[Reply("late", latency=61.0), Reply("ok", latency=1.0)], clock=clock)
    resp, attempts = evaluate_image(REQ, fast_config(request_timeout=60.0), backend, DispatchGate(clock))
    assert (resp.text, attempts) == ("ok", 2)
    assert resp.latency == pytest.approx(1.0)


class RecordingBackend(MockBackend):
    def __init__(self, clock, **kw):
        super().__init__(clock=clock, **kw)
        self.stamps = []

    def complete(self, request, timeout):
        self.stamps.append(self.clock.now())
        return super().complete(request, timeout)


def test_sequential_requests_are_spaced():
    clock = FakeClock()
    backend = RecordingBackend(clock)
    gate = DispatchGate(clock)
    for _ in range(75):
        evaluate_image(REQ, fast_config(), backend, gate)
    gaps = [b - a for a, b in zip(backend.stamps, backend.stamps[1:])]
    assert min(gaps) >= 3.0
    assert clock.now() >= 74 * 3.0


def test_retries_respect_the_same_gate():
    clock = FakeClock()
    backend = RecordingBackend(clock, script=[Fail(), Fail(), "x"])
    evaluate_image(REQ, fast_config(), backend, DispatchGate(clock))
    assert [b - a for a, b in zip(backend.stamps, backend.stamps[1:])] == [3.0, 3.0]


def test_gate_serializes_threads():
    clock = FakeClock()
    gate = DispatchGate(clock)
    stamps = []
    lock = threading.Lock()

    def worker():
        for _ in range(10):
            t = gate.acquire(3.0)
            with lock:
                stamps.append(t)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    stamps.sort()
    assert len(stamps) == 40
    assert all(b - a >= 3.0 for a, b in zip(stamps, stamps[1:]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["ok", "conn", "timeout", "status"]), max_size=10), st.integers(0, 5))
def test_attempts_never_exceed_bound(plan, retries):
    items = [{"ok": "UTILIZACAO: 3", "conn": Fail(), "timeout": Fail("timeout"), "status": Fail("status", 500)}[p]
             for p in plan]
    clock = FakeClock()
    backend = MockBackend(script=items, clock=clock)
    try:
        _, attempts = evaluate_image(REQ, fast_config(max_retries=retries), backend, DispatchGate(clock))
    except RetriesExhausted as exc:
        attempts = exc.attempts
        assert attempts == retries + 1
    assert 1 <= attempts <= retries + 1
    assert backend.calls == attempts


# -- mock backend ---------------------------------------------------------------------


def test_mock_is_deterministic_per_seed_and_request():
    a = MockBackend(seed=11).complete(REQ, 1)
    b = MockBackend(seed=11).complete(REQ, 1)
    assert a.encode() == b.encode()


def test_mock_replays_script():
    backend = MockBackend(script=["hello"])
    assert backend.complete(REQ, 1) == "hello"
    # after the script, generation resumes
    assert parse_response(backend.complete(REQ, 1)).defaulted == frozenset()


def test_mock_seed42_375_calls_parse_in_range():
    backend = MockBackend(seed=42)
    for i in range(375):
        req = BackendRequest("prompt", base64.b64encode(f"img{i}".encode()).decode(), "image/png")
        out = parse_response(backend.complete(req, 1))
        assert out.defaulted == frozenset()
        assert all(1 <= s.points <= 5 for s in out.scores)


def test_parse_script_items():
    items = parse_script(["a", {"fail": "timeout"}, {"text": "b", "latency": 2}, {"repeat": 2, "item": {"fail": "status", "status": 429}}])
    assert items == ["a", Fail("timeout"), Reply("b", 2.0), Fail("status", 429), Fail("status", 429)]
    with pytest.raises(ValueError):
        parse_script([{"fail": "meteor"}])
    with pytest.raises(ValueError):
        parse_script([42])


# -- HTTP backend --------------------------------------------------------------------


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("AUDIT_API_KEY", "sk-test")


def test_http_wire_format(api_key):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "LIMPEZA: 5"}}]})

    profile = BackendProfile(prompt_field="input", image_field="img", response_field="choices.0.message.content",
                             model="vision-model")
    backend = HttpBackend("https://example.invalid/v1/audit", profile=profile, transport=httpx.MockTransport(handler))
    resp, attempts = evaluate_image(REQ, fast_config(), backend, DispatchGate(FakeClock()))
    assert resp.text == "LIMPEZA: 5" and attempts == 1
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"] == {"input": "prompt", "img": REQ.image_payload, "media_type": "image/png",
                            "model": "vision-model"}


def test_http_status_and_transport_errors_are_retried(api_key):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("refused")
        if len(calls) == 2:
            raise httpx.ReadTimeout("slow")
        if len(calls) == 3:
            return httpx.Response(500, text="boom")
        return httpx.Response(200, json={"text": "SAUDE: 3"})

    backend = HttpBackend("https://example.invalid", transport=httpx.MockTransport(handler))
    resp, attempts = evaluate_image(REQ, fast_config(), backend, DispatchGate(FakeClock()))
    assert attempts == 4 and resp.text == "SAUDE: 3"


def test_http_error_types(api_key):
    def conn(request):
        raise httpx.ConnectError("refused")

    backend = HttpBackend("https://example.invalid", transport=httpx.MockTransport(conn))
    with pytest.raises(RetriesExhausted) as info:
        evaluate_image(REQ, fast_config(max_retries=0), backend, DispatchGate(FakeClock()))
    assert isinstance(info.value.last_cause, ConnectivityError)

    def slow(request):
        raise httpx.ReadTimeout("slow")

    backend = HttpBackend("https://example.invalid", transport=httpx.MockTransport(slow))
    with pytest.raises(RetriesExhausted) as info:
        evaluate_image(REQ, fast_config(max_retries=1), backend, DispatchGate(FakeClock()))
    assert isinstance(info.value.last_cause, RequestTimeout) and info.value.attempts == 2


def test_http_requires_credential_and_endpoint(monkeypatch):
    monkeypatch.delenv("AUDIT_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        HttpBackend("https://example.invalid")
    monkeypatch.setenv("AUDIT_API_KEY", "x")
    with pytest.raises(ConfigError):
        HttpBackend("")
