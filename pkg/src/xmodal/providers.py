"""Vision-language provider adapters and the record/replay layer."""

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
from typing import Any, Callable, Optional, Union

from .scene_io import BBox, dumps, write_text_atomic

logger = logging.getLogger(__name__)

DEFAULT_PROVIDERS = ("gpt4", "gemini", "claude2")
DEFAULT_JUDGE = "gpt4"


class ProviderError(RuntimeError):
    """Non-retryable provider failure."""


class TransportError(ProviderError):
    """Retryable failure talking to a provider."""


class ReplayMiss(ProviderError, LookupError):
    def __init__(self, provider: str, key: str):
        super().__init__(f"replay miss: no fixture for provider {provider!r} request {key}")
        self.key = key


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    path: str
    crop: Optional[BBox] = None
    scale: float = 1.0


Part = Union[TextPart, ImagePart]


@dataclass
class ChatRequest:
    parts: list[Part]
    system_text: Optional[str] = None
    temperature: float = 0.0
    # Routing hints for local providers (task, scene_id, det_id, ...); never sent on the wire.
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a chat request needs at least one part")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    def to_doc(self) -> dict:
        parts = []
        for p in self.parts:
            if isinstance(p, TextPart):
                parts.append({"text": p.text})
            else:
                parts.append(
                    {"image": p.path, "crop": p.crop.to_list() if p.crop else None, "scale": p.scale}
                )
        return {
            "system_text": self.system_text,
            "parts": parts,
            "temperature": self.temperature,
            "meta": self.meta,
        }


def request_key(provider: str, request: ChatRequest) -> str:
    doc = {"provider": provider, **request.to_doc()}
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Provider:
    """Text-in/text-out chat endpoint. Subclasses must be thread-safe."""

    name: str = "provider"

    def complete(self, request: ChatRequest) -> str:
        raise NotImplementedError


def call_with_retry(
    provider: Provider,
    request: ChatRequest,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Call ``provider``; retry transport failures with exponential backoff."""
    for attempt in range(attempts):
        try:
            return provider.complete(request)
        except TransportError as exc:
            if attempt == attempts - 1:
                raise
            delay = backoff * (2**attempt)
            logger.warning("%s transport failure (%s); retrying in %.2fs", provider.name, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


class HttpProvider(Provider):
    """OpenAI-style chat-completions adapter.

    Credentials come from ``XMODAL_<NAME>_KEY``; the endpoint from config.
    """

    def __init__(
        self,
        name: str,
        endpoint: str,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        transport: Any = None,
    ):
        self.name = name
        self.endpoint = endpoint
        self.model = model or name
        self.api_key = api_key if api_key is not None else os.environ.get(f"XMODAL_{name.upper()}_KEY")
        self.timeout = timeout
        self._transport = transport

    def build_payload(self, request: ChatRequest) -> dict:
        content: list[dict] = []
        for part in request.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append({"type": "image_url", "image_url": {"url": _image_data_url(part)}})
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": content})
        return {"model": self.model, "messages": messages, "temperature": request.temperature}

    def complete(self, request: ChatRequest) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
                resp = client.post(self.endpoint, json=self.build_payload(request), headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape") from exc
        if isinstance(content, list):
            content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
        return str(content)


def _image_data_url(part: ImagePart) -> str:
    from PIL import Image

    with Image.open(part.path) as img:
        img = img.convert("RGB")
        if part.crop is not None:
            c = part.crop
            img = img.crop((round(c.x), round(c.y), round(c.x2), round(c.y2)))
        if part.scale != 1.0:
            img = img.resize((max(1, round(img.width * part.scale)), max(1, round(img.height * part.scale))))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


class RecordingProvider(Provider):
    """Pass requests through to ``inner`` and store each reply as a fixture."""

    def __init__(self, inner: Provider, directory: str | os.PathLike):
        self.inner = inner
        self.name = inner.name
        self.directory = Path(directory)

    def complete(self, request: ChatRequest) -> str:
        reply = self.inner.complete(request)
        key = request_key(self.name, request)
        doc = {"provider": self.name, "key": key, "request": request.to_doc(), "reply": reply}
        write_text_atomic(self.directory / self.name / f"{key}.json", dumps(doc))
        return reply


class ReplayProvider(Provider):
    """Serve replies only from recorded fixtures."""

    def __init__(self, name: str, directory: str | os.PathLike):
        self.name = name
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}

    def complete(self, request: ChatRequest) -> str:
        key = request_key(self.name, request)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        path = self.directory / self.name / f"{key}.json"
        if not path.is_file():
            raise ReplayMiss(self.name, key)
        with open(path, encoding="utf-8") as fh:
            reply = json.load(fh)["reply"]
        with self._lock:
            self._cache[key] = reply
        return reply


class ScriptedProvider(Provider):
    """Return canned replies in order; handy for tests and fixtures."""

    def __init__(self, name: str, replies: list[str] | Callable[[ChatRequest], str]):
        self.name = name
        self._replies = replies
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.requests.append(request)
            if callable(self._replies):
                return self._replies(request)
            if not self._replies:
                raise ProviderError(f"{self.name}: script exhausted")
            return self._replies.pop(0)


@dataclass
class ProviderSpec:
    name: str
    kind: str = "mock"  # mock | http
    endpoint: Optional[str] = None
    model: Optional[str] = None
    seed: int = 0
    hallucination_rate: float = 0.0


def build_provider(
    spec: ProviderSpec,
    record_dir: Optional[str] = None,
    replay_dir: Optional[str] = None,
    vocab: Optional[dict[str, list[str]]] = None,
) -> Provider:
    if replay_dir is not None:
        return ReplayProvider(spec.name, replay_dir)
    if spec.kind == "mock":
        from .mock import MockProvider

        provider: Provider = MockProvider(
            spec.name, seed=spec.seed, hallucination_rate=spec.hallucination_rate, vocab=vocab
        )
    elif spec.kind == "http":
        if not spec.endpoint:
            raise ValueError(f"provider {spec.name!r}: http kind needs providers.{spec.name}.endpoint")
        provider = HttpProvider(spec.name, spec.endpoint, model=spec.model)
    else:
        raise ValueError(f"provider {spec.name!r}: unknown kind {spec.kind!r}")
    if record_dir is not None:
        provider = RecordingProvider(provider, record_dir)
    return provider
