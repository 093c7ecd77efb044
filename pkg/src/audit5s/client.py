"""Multimodal model backends with a global dispatch gate and bounded retries."""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence, Union

import httpx

from .domain import SENSES

log = logging.getLogger(__name__)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
JPEG_MAGIC = b"\xff\xd8\xff"
MEDIA_TYPES = ("image/png", "image/jpeg")
DEFAULT_CREDENTIAL_ENV = "AUDIT_API_KEY"


# -- errors -------------------------------------------------------------------


class ClientError(Exception):
    """Base class for model-client failures."""


class ConfigError(ClientError):
    """Invalid client configuration, detected before any request is sent."""


class ImageEncodingError(ClientError):
    pass


class ImageNotFound(ImageEncodingError):
    pass


class UnsupportedImageFormat(ImageEncodingError):
    pass


class ImageReadError(ImageEncodingError):
    pass


class TransportError(ClientError):
    """A retryable failure talking to the backend."""


class ConnectivityError(TransportError):
    pass


class RequestTimeout(TransportError):
    pass


class StatusError(TransportError):
    def __init__(self, status: int, message: str = "") -> None:
        super().__init__(f"backend returned status {status}" + (f": {message}" if message else ""))
        self.status = status


class RetriesExhausted(ClientError):
    def __init__(self, attempts: int, last_cause: TransportError) -> None:
        super().__init__(f"gave up after {attempts} attempts: {last_cause}")
        self.attempts = attempts
        self.last_cause = last_cause


# -- clocks and the dispatch gate ---------------------------------------------


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Deterministic clock for tests; sleeping advances time instantly."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += seconds


class DispatchGate:
    """Serializes dispatches so adjacent ones are at least ``delay`` apart.

    Callers block while holding the gate, which keeps dispatch order equal to
    arrival order.
    """

    def __init__(self, clock: Optional[Clock] = None) -> None:
        self.clock: Clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._last: Optional[float] = None

    def acquire(self, delay: float) -> float:
        """Wait for the next slot and return its dispatch time."""
        with self._lock:
            now = self.clock.now()
            if self._last is not None:
                wait = self._last + delay - now
                if wait > 0:
                    self.clock.sleep(wait)
                    now = self.clock.now()
            self._last = now
            return now

    def reset(self) -> None:
        with self._lock:
            self._last = None


_GLOBAL_GATE = DispatchGate()


def global_gate() -> DispatchGate:
    """The process-wide gate used when no gate is passed explicitly."""
    return _GLOBAL_GATE


# -- configuration and wire types ---------------------------------------------


@dataclass(frozen=True)
class ClientConfig:
    max_retries: int = 3
    inter_request_delay: float = 3.0
    request_timeout: float = 60.0
    endpoint: str = ""
    credential: str = DEFAULT_CREDENTIAL_ENV
    cost_per_request: Optional[Decimal] = None

    def validate(self) -> None:
        if isinstance(self.max_retries, bool) or not isinstance(self.max_retries, int) or self.max_retries < 0:
            raise ConfigError(f"max_retries must be a non-negative integer, got {self.max_retries!r}")
        for name in ("inter_request_delay", "request_timeout"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or value != value or value < 0:
                raise ConfigError(f"{name} must be a non-negative duration, got {value!r}")
        if self.cost_per_request is not None and self.cost_per_request < 0:
            raise ConfigError("cost_per_request must be >= 0")


@dataclass(frozen=True)
class BackendRequest:
    prompt_text: str
    image_payload: str
    image_media_type: str

    def __post_init__(self) -> None:
        if self.image_media_type not in MEDIA_TYPES:
            raise ValueError(f"unsupported media type {self.image_media_type!r}")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    latency: float
    backend_name: str


class Backend(Protocol):
    name: str

    def complete(self, request: BackendRequest, timeout: float) -> str:
        """Return the model's free-text reply or raise a TransportError."""
        ...


# -- image encoding ------------------------------------------------------------


def detect_media_type(head: bytes) -> Optional[str]:
    if head.startswith(PNG_MAGIC):
        return "image/png"
    if head.startswith(JPEG_MAGIC):
        return "image/jpeg"
    return None


def encode_image(path: Union[str, os.PathLike], media_type: Optional[str] = None) -> tuple[str, str]:
    """Base64-encode an image file.

    The format is detected from magic bytes; ``media_type`` overrides
    detection (it must still be one of the supported types).
    """
    p = Path(path)
    if not p.exists():
        raise ImageNotFound(f"image not found: {p}")
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"cannot read image {p}: {exc}") from exc
    if media_type is None:
        media_type = detect_media_type(data)
        if media_type is None:
            raise UnsupportedImageFormat(f"unsupported format (not PNG/JPEG): {p}")
    elif media_type not in MEDIA_TYPES:
        raise UnsupportedImageFormat(f"unsupported media type override {media_type!r}")
    return base64.b64encode(data).decode("ascii"), media_type


# -- retry loop ----------------------------------------------------------------


def evaluate_image(
    request: BackendRequest,
    config: ClientConfig,
    backend: Backend,
    gate: Optional[DispatchGate] = None,
) -> tuple[BackendResponse, int]:
    """Send ``request`` through the gate, retrying transport failures.

    Returns the first successful response and the number of attempts used.
    Only transport/timeout/status failures are retried; whatever the reply
    text contains is the caller's business.
    """
    config.validate()
    gate = gate or _GLOBAL_GATE
    clock = gate.clock
    last: Optional[TransportError] = None
    for attempt in range(1, config.max_retries + 2):
        started = gate.acquire(config.inter_request_delay)
        try:
            text = backend.complete(request, config.request_timeout)
            latency = clock.now() - started
            if latency > config.request_timeout:
                raise RequestTimeout(
                    f"reply took {latency:.3f}s, limit is {config.request_timeout:.3f}s"
                )
        except TransportError as exc:
            last = exc
            log.warning("attempt %d/%d failed: %s", attempt, config.max_retries + 1, exc)
            continue
        return BackendResponse(text=text or "", latency=latency, backend_name=backend.name), attempt
    assert last is not None
    raise RetriesExhausted(config.max_retries + 1, last)


# -- mock backend ----------------------------------------------------------------


@dataclass(frozen=True)
class Fail:
    """A scripted transport failure."""

    kind: str = "connectivity"  # connectivity | timeout | status
    status: int = 503

    def exception(self) -> TransportError:
        if self.kind == "timeout":
            return RequestTimeout("scripted timeout")
        if self.kind == "status":
            return StatusError(self.status, "scripted")
        if self.kind == "connectivity":
            return ConnectivityError("scripted connection failure")
        raise ValueError(f"unknown failure kind {self.kind!r}")


@dataclass(frozen=True)
class Reply:
    """A scripted reply, optionally taking ``latency`` seconds on the clock."""

    text: str
    latency: float = 0.0


ScriptItem = Union[str, Fail, Reply]

_REMARKS = {
    1: ["severe problems throughout the area", "standard not followed at all"],
    2: ["several deviations from the standard", "recurring problems visible"],
    3: ["partially compliant, some deviations", "acceptable with gaps"],
    4: ["mostly compliant, minor deviations", "good condition overall"],
    5: ["fully compliant with the standard", "no deviations observed"],
}


def _generated_reply(seed: int, request: BackendRequest) -> str:
    digest = hashlib.sha256(
        f"{seed}\0{request.image_media_type}\0{request.prompt_text}\0{request.image_payload}".encode()
    ).hexdigest()
    rng = random.Random(digest)
    base = rng.choice((2, 3, 4, 4, 5, 5))
    lines = ["5S audit assessment of the captured area.", ""]
    total = 0
    for sense in SENSES:
        points = min(5, max(1, base + rng.choice((-1, 0, 0, 0, 1))))
        total += points
        sep = rng.choice((": ", ":", " - ", " | ", " "))
        lines.append(f"{sense.token}{sep}{points} ({rng.choice(_REMARKS[points])})")
    lines += ["", f"Total: {total}/25"]
    return "\n".join(lines)


class MockBackend:
    """Offline backend.

    Without a script every reply is generated from ``seed`` and the request,
    so the same request always gets the same text. A script is replayed item
    by item first; once it is used up, generation takes over.
    """

    def __init__(
        self,
        seed: int = 0,
        script: Optional[Sequence[ScriptItem]] = None,
        clock: Optional[Clock] = None,
        name: str = "mock",
    ) -> None:
        self.seed = seed
        self.name = name
        self.clock = clock
        self._script = list(script or ())
        self._pos = 0
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, request: BackendRequest, timeout: float) -> str:
        with self._lock:
            self.calls += 1
            item: Optional[ScriptItem] = None
            if self._pos < len(self._script):
                item = self._script[self._pos]
                self._pos += 1
        if item is None:
            return _generated_reply(self.seed, request)
        if isinstance(item, Fail):
            raise item.exception()
        if isinstance(item, Reply):
            if item.latency and self.clock is not None:
                self.clock.sleep(item.latency)
            return item.text
        return item


def mock_backend(seed: int = 0, script: Optional[Sequence[ScriptItem]] = None, clock: Optional[Clock] = None) -> MockBackend:
    return MockBackend(seed=seed, script=script, clock=clock)


def parse_script(items: Sequence[Any]) -> list[ScriptItem]:
    """Build a script from JSON-style items.

    Strings are replies; objects are ``{"fail": kind, "status": n}`` or
    ``{"text": ..., "latency": s}``; ``{"repeat": n, "item": ...}`` expands.
    """
    out: list[ScriptItem] = []
    for raw in items:
        if isinstance(raw, str):
            out.append(raw)
        elif isinstance(raw, dict) and "repeat" in raw:
            out.extend(parse_script([raw["item"]]) * int(raw["repeat"]))
        elif isinstance(raw, dict) and "fail" in raw:
            fail = Fail(str(raw["fail"]), int(raw.get("status", 503)))
            fail.exception()  # validate kind early
            out.append(fail)
        elif isinstance(raw, dict) and "text" in raw:
            out.append(Reply(str(raw["text"]), float(raw.get("latency", 0.0))))
        else:
            raise ValueError(f"unrecognised script item: {raw!r}")
    return out


# -- HTTP backend ------------------------------------------------------------------


@dataclass(frozen=True)
class BackendProfile:
    """Field names used on the wire by an HTTP backend."""

    prompt_field: str = "prompt"
    image_field: str = "image"
    media_type_field: str = "media_type"
    response_field: str = "text"
    model: Optional[str] = None
    model_field: str = "model"


def _dig(document: Any, dotted: str) -> Any:
    node = document
    for part in dotted.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node[part]
    return node


@dataclass
class HttpBackend:
    endpoint: str
    credential_env: str = DEFAULT_CREDENTIAL_ENV
    profile: BackendProfile = field(default_factory=BackendProfile)
    transport: Optional[httpx.BaseTransport] = None
    name: str = "http"

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ConfigError("http backend needs an endpoint")
        if not os.environ.get(self.credential_env):
            raise ConfigError(f"environment variable {self.credential_env} is not set")

    def body(self, request: BackendRequest) -> dict:
        p = self.profile
        body = {
            p.prompt_field: request.prompt_text,
            p.image_field: request.image_payload,
            p.media_type_field: request.image_media_type,
        }
        if p.model:
            body[p.model_field] = p.model
        return body

    def complete(self, request: BackendRequest, timeout: float) -> str:
        headers = {"Authorization": f"Bearer {os.environ.get(self.credential_env, '')}"}
        try:
            with httpx.Client(timeout=timeout, transport=self.transport) as http:
                resp = http.post(self.endpoint, json=self.body(request), headers=headers)
        except httpx.TimeoutException as exc:
            raise RequestTimeout(str(exc) or "request timed out") from exc
        except httpx.TransportError as exc:
            raise ConnectivityError(str(exc) or type(exc).__name__) from exc
        if not resp.is_success:
            raise StatusError(resp.status_code, resp.text[:200])
        try:
            value = _dig(resp.json(), self.profile.response_field)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            # A malformed body is a server-side fault, so it is retried like one.
            raise StatusError(resp.status_code, f"reply lacks field {self.profile.response_field!r}") from exc
        return "" if value is None else str(value)
