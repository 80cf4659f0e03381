"""Language-model backends behind one small contract.

A backend has an ``identity`` string and a ``complete(prompt, params)``
method returning the reply text.  Three implementations live here:

* :class:`ScriptedBackend` replays a transcript keyed by prompt hash and
  raises :class:`~ccb.errors.TranscriptMiss` on anything it has not seen.
* :class:`RecordingBackend` wraps another backend and records a transcript.
* :class:`RemoteBackend` talks to an OpenAI-compatible chat-completions
  endpoint configured through ``CCB_LLM_ENDPOINT``, ``CCB_LLM_MODEL`` and
  ``CCB_LLM_API_KEY``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import httpx

from ..errors import BackendError, TranscriptMiss

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "CCB_LLM_ENDPOINT"
ENV_MODEL = "CCB_LLM_MODEL"
ENV_API_KEY = "CCB_LLM_API_KEY"


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int | None = None


@runtime_checkable
class LlmBackend(Protocol):
    identity: str

    def complete(self, prompt: str, params: DecodingParams = DecodingParams()) -> str: ...


def prompt_key(prompt: str) -> str:
    """Stable content hash used to key transcripts."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Deterministic replay of ``[{prompt_key, reply}, ...]``."""

    def __init__(self, entries, identity: str = "scripted"):
        self.identity = identity
        self._replies: dict[str, str] = {}
        for entry in entries:
            self._replies[entry["prompt_key"]] = entry["reply"]

    @classmethod
    def from_file(cls, path, identity: str | None = None) -> ScriptedBackend:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            entries = data["entries"]
            identity = identity or data.get("identity")
        else:
            entries = data
        return cls(entries, identity or "scripted")

    @classmethod
    def from_pairs(cls, pairs, identity: str = "scripted") -> ScriptedBackend:
        """Build from ``(prompt, reply)`` pairs; handy in tests."""
        return cls([{"prompt_key": prompt_key(p), "reply": r} for p, r in pairs], identity)

    def __len__(self) -> int:
        return len(self._replies)

    def complete(self, prompt: str, params: DecodingParams = DecodingParams()) -> str:
        key = prompt_key(prompt)
        try:
            return self._replies[key]
        except KeyError:
            raise TranscriptMiss(key) from None


class RecordingBackend:
    """Pass-through that remembers every ``(prompt_key, reply)`` it sees."""

    def __init__(self, inner: LlmBackend):
        self.inner = inner
        self.identity = inner.identity
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}

    def complete(self, prompt: str, params: DecodingParams = DecodingParams()) -> str:
        reply = self.inner.complete(prompt, params)
        with self._lock:
            self._entries[prompt_key(prompt)] = reply
        return reply

    def transcript(self) -> list[dict[str, str]]:
        with self._lock:
            return [{"prompt_key": k, "reply": self._entries[k]} for k in sorted(self._entries)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.transcript(), fh, ensure_ascii=False, indent=1, sort_keys=True)
            fh.write("\n")


class RemoteBackend:
    """OpenAI-compatible ``/chat/completions`` client.

    ``endpoint`` is the API base URL (``.../v1``).  Transport errors,
    timeouts, non-2xx statuses and malformed bodies all surface as
    :class:`BackendError`.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.identity = model
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> RemoteBackend:
        endpoint = os.environ.get(ENV_ENDPOINT)
        model = os.environ.get(ENV_MODEL)
        if not endpoint or not model:
            raise BackendError(f"set {ENV_ENDPOINT} and {ENV_MODEL} to use a remote backend")
        return cls(endpoint, model, os.environ.get(ENV_API_KEY), **kwargs)

    def complete(self, prompt: str, params: DecodingParams = DecodingParams()) -> str:
        body: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        url = f"{self.endpoint}/chat/completions"
        try:
            resp = self._client.post(url, json=body)
        except httpx.TimeoutException as exc:
            raise BackendError(f"timeout calling {url}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error calling {url}: {exc}") from exc
        if resp.status_code >= 400:
            raise BackendError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion body from {url}") from exc
        return content or ""

    def close(self) -> None:
        self._client.close()
