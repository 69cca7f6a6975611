"""Completion backends: scripted transcript replay, live HTTP, and recording."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Protocol, runtime_checkable


class TransportError(RuntimeError):
    """A retriable failure to obtain any completion text."""


class TranscriptMiss(TransportError):
    """The scripted transcript holds no response for a prompt."""


class BackendUnavailable(RuntimeError):
    """Transport retries were exhausted."""


@runtime_checkable
class Backend(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Replays responses keyed by the SHA-256 of the prompt.

    Several entries for one prompt are served in file order; the last one
    repeats once the list is used up.
    """

    name = "scripted"

    def __init__(self, responses: dict[str, list[str]]) -> None:
        self._responses = {k: list(v) for k, v in responses.items()}
        self._served: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        responses: dict[str, list[str]] = defaultdict(list)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    responses[entry["prompt_sha256"]].append(entry["response"])
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise ValueError(f"transcript line {lineno}: expected prompt_sha256 and response") from None
        return cls(responses)

    def complete(self, prompt: str) -> str:
        key = prompt_digest(prompt)
        with self._lock:
            options = self._responses.get(key)
            if not options:
                raise TranscriptMiss(f"no transcript entry for prompt {key[:12]}")
            index = min(self._served[key], len(options) - 1)
            self._served[key] += 1
            return options[index]


class RecordingBackend:
    """Wraps another backend and keeps one transcript entry per distinct prompt."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.name = f"recording:{inner.name}"
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        response = self.inner.complete(prompt)
        key = prompt_digest(prompt)
        with self._lock:
            self._entries.setdefault(key, response)
        return response

    def dump(self) -> str:
        with self._lock:
            items = sorted(self._entries.items())
        return "".join(
            json.dumps({"prompt_sha256": k, "response": v}, ensure_ascii=False) + "\n" for k, v in items
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump(), encoding="utf-8")


class LiveBackend:
    """Minimal OpenAI-compatible chat-completions client asking for JSON output."""

    name = "live"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "TASER_API_KEY",
        timeout: float = 120.0,
    ) -> None:
        import httpx

        key = os.environ.get(api_key_env)
        if not key:
            raise ValueError(f"environment variable {api_key_env} is not set")
        self.model = model
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {key}"},
            timeout=timeout,
        )
        self._errors = (httpx.TransportError, httpx.HTTPStatusError)

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": "Respond with a single JSON object."},
                {"role": "user", "content": prompt},
            ],
        }
        try:
            response = self._client.post("/chat/completions", json=body)
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except self._errors as exc:
            raise TransportError(str(exc)) from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
