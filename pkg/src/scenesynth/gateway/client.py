"""Chat-completions wire client with structured-output validation, a single
repair round-trip, exponential backoff and a request budget."""
from __future__ import annotations

import base64
import io
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import BudgetExhausted, GatewayTimeout, SchemaError, TransportError, UnknownRole
from .schemas import SCHEMAS, validate

log = logging.getLogger(__name__)

ROLES = ("collector", "locator", "judge", "planner")
RETRY_STATUS = {429, 500, 502, 503, 504}
MAX_IMAGE_EDGE = 512

ENV_ENDPOINT = "FYI_LLM_ENDPOINT"
ENV_MODEL = "FYI_LLM_MODEL"
ENV_API_KEY = "FYI_LLM_API_KEY"


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4o"
    api_key: str | None = None
    timeout_s: float = 30.0
    max_attempts: int = 5
    backoff_base_ms: float = 500.0
    backoff_factor: float = 2.0
    max_inflight: int = 4
    # None disables the request budget
    request_budget: int | None = None

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.backoff_factor < 1:
            raise ValueError("backoff_factor must be >= 1")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")

    @classmethod
    def from_env(cls, **overrides) -> "GatewayConfig":
        env = {}
        if os.environ.get(ENV_ENDPOINT):
            env["endpoint"] = os.environ[ENV_ENDPOINT]
        if os.environ.get(ENV_MODEL):
            env["model"] = os.environ[ENV_MODEL]
        if os.environ.get(ENV_API_KEY):
            env["api_key"] = os.environ[ENV_API_KEY]
        env.update(overrides)
        return cls(**env)


@dataclass
class StructuredRequest:
    role_tag: str
    prompt: str
    expected_schema: str
    attachments: list[bytes] = field(default_factory=list)
    # in-process state for rule-based backends; never serialized
    context: dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.role_tag not in ROLES:
            raise UnknownRole(self.role_tag)
        if self.expected_schema not in SCHEMAS:
            raise SchemaError(f"unregistered schema {self.expected_schema!r}")


SYSTEM_PROMPT = (
    "You are one stage of a 3D scene synthesis pipeline. Answer with a single JSON object "
    "that matches the requested schema and nothing else."
)


def extract_json(text: str) -> dict:
    """Return the first balanced ``{...}`` block in ``text`` that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
                continue
            if ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise SchemaError("no JSON object found in reply")


def encode_image(png_or_array) -> str:
    """Base64 PNG data URL, downscaled so the long edge is at most 512 px."""
    from PIL import Image

    if isinstance(png_or_array, (bytes, bytearray)):
        img = Image.open(io.BytesIO(png_or_array))
    else:
        img = Image.fromarray(png_or_array)
    if max(img.size) > MAX_IMAGE_EDGE:
        img.thumbnail((MAX_IMAGE_EDGE, MAX_IMAGE_EDGE))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def build_messages(request: StructuredRequest) -> list[dict]:
    if request.attachments:
        content: Any = [{"type": "text", "text": request.prompt}] + [
            {"type": "image_url", "image_url": {"url": encode_image(a)}} for a in request.attachments
        ]
    else:
        content = request.prompt
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": content}]


Transport = Callable[[str, dict, dict, float], "tuple[int, str]"]


def requests_transport(url: str, headers: dict, body: dict, timeout: float) -> tuple[int, str]:
    import requests

    try:
        resp = requests.post(url, json=body, headers=headers, timeout=timeout)
    except requests.Timeout as exc:
        raise TimeoutError(str(exc)) from exc
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    return resp.status_code, resp.text


class LiveGateway:
    """Thread-safe client for a chat-completions endpoint."""

    def __init__(
        self,
        config: GatewayConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.transport = transport or requests_transport
        self.sleep = sleep
        self.rng = rng or random.Random(0)
        self._sem = threading.BoundedSemaphore(config.max_inflight)
        self._lock = threading.Lock()
        self.requests_made = 0
        self.inflight = 0
        self.max_inflight_seen = 0

    def backoff_delay(self, attempt: int) -> float:
        """Seconds to wait after failed attempt ``attempt`` (0-based)."""
        base = self.config.backoff_base_ms / 1000.0 * self.config.backoff_factor**attempt
        with self._lock:
            jitter = self.rng.uniform(0.0, base)
        return base + jitter

    def _reserve(self) -> None:
        with self._lock:
            budget = self.config.request_budget
            if budget is not None and self.requests_made >= budget:
                raise BudgetExhausted(f"request budget of {budget} used up")
            self.requests_made += 1

    def _post(self, messages: list[dict]) -> tuple[int, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = {"model": self.config.model, "messages": messages, "temperature": 0}
        with self._sem:
            with self._lock:
                self.inflight += 1
                self.max_inflight_seen = max(self.max_inflight_seen, self.inflight)
            try:
                return self.transport(self.config.endpoint, headers, body, self.config.timeout_s)
            finally:
                with self._lock:
                    self.inflight -= 1

    def _complete(self, messages: list[dict], trace: list[str]) -> str:
        """One logical completion with retries; shares the attempt trace of the whole send."""
        last_timeout = False
        while len(trace) < self.config.max_attempts:
            attempt = len(trace)
            self._reserve()
            try:
                status, text = self._post(messages)
            except TimeoutError as exc:
                trace.append(f"attempt {attempt}: timeout ({exc})")
                last_timeout = True
            except OSError as exc:
                trace.append(f"attempt {attempt}: transport error ({exc})")
                last_timeout = False
            else:
                if status == 200:
                    trace.append(f"attempt {attempt}: 200")
                    try:
                        return json.loads(text)["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"malformed completion envelope: {exc}", trace) from None
                trace.append(f"attempt {attempt}: HTTP {status}")
                last_timeout = False
                if status not in RETRY_STATUS:
                    raise TransportError(f"HTTP {status}", trace)
            if len(trace) < self.config.max_attempts:
                delay = self.backoff_delay(attempt)
                log.debug("retrying in %.3fs", delay)
                self.sleep(delay)
        if last_timeout:
            raise GatewayTimeout(f"timed out after {len(trace)} attempts")
        raise TransportError(f"gave up after {len(trace)} attempts", trace)

    def send(self, request: StructuredRequest) -> dict:
        trace: list[str] = []
        messages = build_messages(request)
        content = self._complete(messages, trace)
        try:
            return validate(extract_json(content), request.expected_schema)
        except SchemaError as exc:
            repair = messages + [
                {"role": "assistant", "content": content},
                {
                    "role": "user",
                    "content": f"Your reply failed validation: {exc}. "
                    f"Reply with only a corrected JSON object for {request.expected_schema}.",
                },
            ]
        content = self._complete(repair, trace)
        return validate(extract_json(content), request.expected_schema)


def send(config: GatewayConfig, request: StructuredRequest, transport: Transport | None = None) -> dict:
    return LiveGateway(config, transport=transport).send(request)
