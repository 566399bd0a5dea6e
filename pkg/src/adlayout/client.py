"""Chat-completions transport with record/replay cassettes.

This is the only module that talks to the network.  Three backends:

``live``
    POST to ``{api_base}/chat/completions`` (OpenAI wire format, image parts
    as base64 data URLs), retrying timeouts, 429 and 5xx.
``record``
    like ``live``, and every exchange is appended to a JSON-lines cassette.
``replay``
    answer from the cassette by request fingerprint; no network at all.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx
from PIL import Image, UnidentifiedImageError

from .errors import (
    AuthMissing,
    CassetteMiss,
    ConfigError,
    MalformedResponse,
    RateLimited,
    RequestRejected,
    TransportError,
    UnreadableImage,
    UnsupportedFormat,
)
from .prompting import PromptBundle, TextPart

log = logging.getLogger(__name__)

ENV_API_BASE = "ADLAYOUT_API_BASE"
ENV_API_KEY = "ADLAYOUT_API_KEY"
ENV_MODEL = "ADLAYOUT_MODEL"
DEFAULT_MODEL = "gpt-4o-2024-08-06"
DEFAULT_TEMPERATURE = 0.7
DEFAULT_TOP_P = 1.0
DEFAULT_MAX_TOKENS = 2048
DEFAULT_CONCURRENCY = 4
RETRY_DELAYS = (1.0, 2.0, 4.0)
BACKENDS = ("live", "record", "replay")

_MEDIA_TYPES = {"PNG": "image/png", "JPEG": "image/jpeg"}
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


@dataclass(frozen=True)
class EncodedImage:
    media_type: str
    data: str
    digest: str

    @property
    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{self.data}"


_encode_cache: dict[tuple, EncodedImage] = {}
_encode_lock = threading.Lock()


def encode_image(path: Union[str, Path]) -> EncodedImage:
    """Base64 payload plus sha256 digest of a PNG or JPEG file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UnreadableImage(f"cannot read {path}: {exc}") from None
    key = (str(path.resolve()), hashlib.sha256(raw).hexdigest())
    with _encode_lock:
        if key in _encode_cache:
            return _encode_cache[key]
    if raw.startswith(_PNG_MAGIC):
        fmt = "PNG"
    elif raw.startswith(_JPEG_MAGIC):
        fmt = "JPEG"
    else:
        raise UnsupportedFormat(f"{path} is not a PNG or JPEG image")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise UnreadableImage(f"{path} is damaged: {exc}") from None
    encoded = EncodedImage(_MEDIA_TYPES[fmt], base64.b64encode(raw).decode("ascii"), "sha256:" + key[1])
    with _encode_lock:
        _encode_cache[key] = encoded
    return encoded


@dataclass(frozen=True)
class ModelRequest:
    model: str
    bundle: PromptBundle
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS

    def _messages(self, images: bool) -> list[dict]:
        out = []
        for m in self.bundle.messages:
            content = []
            for part in m.parts:
                if isinstance(part, TextPart):
                    content.append({"type": "text", "text": part.text})
                else:
                    enc = encode_image(part.path)
                    if images:
                        content.append({"type": "image_url", "image_url": {"url": enc.data_url}})
                    else:
                        content.append({"type": "image", "digest": enc.digest})
            out.append({"role": m.role, "content": content})
        return out

    def wire_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": self._messages(images=True),
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    def audit_form(self) -> dict:
        """Request with images replaced by content digests."""
        return {
            "model": self.model,
            "messages": self._messages(images=False),
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.audit_form(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: dict = field(default_factory=dict)
    latency_ms: float = 0.0
    raw: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"text": self.text, "usage": self.usage, "latency_ms": self.latency_ms, "raw": self.raw}

    @classmethod
    def from_json(cls, data: dict) -> "ModelResponse":
        return cls(data["text"], data.get("usage", {}), data.get("latency_ms", 0.0), data.get("raw", {}))


class Cassette:
    """Append-only JSON-lines store of request/response pairs."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, ModelResponse] = {}
        if self.path.exists():
            for n, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    self._entries.setdefault(entry["fingerprint"], ModelResponse.from_json(entry["response"]))
                except (ValueError, KeyError) as exc:
                    raise ConfigError(f"{self.path}:{n}: bad cassette line ({exc})") from None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._entries

    def lookup(self, request: ModelRequest) -> ModelResponse:
        fp = request.fingerprint()
        try:
            return self._entries[fp]
        except KeyError:
            raise CassetteMiss(f"no recorded response for request {fp} in {self.path}") from None

    def append(self, request: ModelRequest, response: ModelResponse) -> None:
        fp = request.fingerprint()
        line = json.dumps(
            {"fingerprint": fp, "request": request.audit_form(), "response": response.to_json()},
            sort_keys=True,
            ensure_ascii=False,
        )
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self._entries.setdefault(fp, response)


def _is_transient(status: int) -> bool:
    return status == 429 or status >= 500


class VLMClient:
    """Thread-safe chat client; ``chat`` is the single entry point."""

    def __init__(
        self,
        backend: str = "replay",
        *,
        cassette: Union[str, Path, Cassette, None] = None,
        api_base: Optional[str] = None,
        api_key: Optional[str] = None,
        model: Optional[str] = None,
        concurrency: int = DEFAULT_CONCURRENCY,
        timeout: float = 120.0,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        retry_delays: Sequence[float] = RETRY_DELAYS,
    ):
        if backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}, got {backend!r}")
        self.backend = backend
        self.model = model or os.environ.get(ENV_MODEL) or DEFAULT_MODEL
        if cassette is not None and not isinstance(cassette, Cassette):
            cassette = Cassette(cassette)
        self.cassette = cassette
        if backend in ("replay", "record") and cassette is None:
            raise ConfigError(f"{backend} backend needs a cassette path")
        self.api_base = (api_base or os.environ.get(ENV_API_BASE) or "").rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        self._sem = threading.BoundedSemaphore(max(1, concurrency))
        self.concurrency = max(1, concurrency)
        self._timeout = timeout
        self._transport = transport
        self._sleep = sleep
        self._retry_delays = tuple(retry_delays)
        self._http: Optional[httpx.Client] = None
        self._http_lock = threading.Lock()
        self.calls = 0

    def request(self, bundle: PromptBundle, **sampling) -> ModelRequest:
        return ModelRequest(self.model, bundle, **sampling)

    def chat(self, request: ModelRequest) -> ModelResponse:
        if self.backend == "replay":
            return self.cassette.lookup(request)
        response = self._live(request)
        if self.backend == "record":
            self.cassette.append(request, response)
        return response

    # -- live transport ------------------------------------------------------

    def _client(self) -> httpx.Client:
        with self._http_lock:
            if self._http is None:
                self._http = httpx.Client(timeout=self._timeout, transport=self._transport)
            return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def _live(self, request: ModelRequest) -> ModelResponse:
        if not self.api_key:
            raise AuthMissing(f"set {ENV_API_KEY} to use the {self.backend} backend")
        if not self.api_base:
            raise AuthMissing(f"set {ENV_API_BASE} to use the {self.backend} backend")
        url = f"{self.api_base}/chat/completions"
        payload = request.wire_payload()
        headers = {"Authorization": f"Bearer {self.api_key}"}
        attempts = len(self._retry_delays) + 1
        last_error = ""
        for attempt in range(attempts):
            if attempt:
                delay = self._retry_delays[attempt - 1]
                log.warning("retrying chat request in %.0fs (%s)", delay, last_error)
                self._sleep(delay)
            start = time.monotonic()
            try:
                with self._sem:
                    self.calls += 1
                    resp = self._client().post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.TransportError as exc:
                last_error = f"connection error: {exc}"
                continue
            latency = (time.monotonic() - start) * 1000.0
            if _is_transient(resp.status_code):
                last_error = f"HTTP {resp.status_code}"
                if resp.status_code == 429 and attempt == attempts - 1:
                    raise RateLimited(f"rate limited after {attempts} attempts")
                continue
            if resp.status_code >= 400:
                raise RequestRejected(resp.status_code, resp.text)
            return _parse_completion(resp, latency)
        raise TransportError(f"chat request failed after {attempts} attempts: {last_error}")


def _parse_completion(resp: httpx.Response, latency_ms: float) -> ModelResponse:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected chat-completions payload ({exc}): {resp.text[:200]}") from None
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str) or not content.strip():
        raise MalformedResponse("chat-completions payload has empty message content")
    return ModelResponse(content, data.get("usage") or {}, round(latency_ms, 1), data)
