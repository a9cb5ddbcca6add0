"""Chat-completion backends.

One contract, two implementations: an OpenAI-compatible HTTP client for real
model runs, and a deterministic scripted policy for offline verification.
Every completion increments a per-run counter partitioned by phase
(plan/reason/act) so run manifests can report training-vs-test call budgets.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Optional

logger = logging.getLogger(__name__)

PHASES = ("plan", "reason", "act")

DEFAULT_MAX_TOKENS = 512
# Prevents the model from continuing past its turn into the next template slot.
DEFAULT_STOP = ("\nObservation:", "\ngoal:")


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.1
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop: Optional[tuple[str, ...]] = DEFAULT_STOP

    def __post_init__(self):
        if not self.system:
            raise ValueError("system prompt cannot be empty")
        if not self.user:
            raise ValueError("user prompt cannot be empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))


def chat_request_body(req: ChatRequest, model: str) -> dict:
    """The wire JSON body for a chat completion request (schema-stable)."""
    body = {
        "model": model,
        "messages": [
            {"role": "system", "content": req.system},
            {"role": "user", "content": req.user},
        ],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    if req.stop is not None:
        body["stop"] = list(req.stop)
    return body


class BackendError(Exception):
    """Fatal backend failure (after retries, or a non-retriable response)."""


class CallCounter:
    """Thread-safe per-phase completion counter."""

    def __init__(self):
        self._lock = threading.Lock()
        self.counts = {phase: 0 for phase in PHASES}

    def increment(self, phase: str) -> None:
        with self._lock:
            self.counts[phase] = self.counts.get(phase, 0) + 1

    def total(self) -> int:
        return sum(self.counts.values())

    def merge(self, other: dict) -> None:
        with self._lock:
            for phase, n in other.items():
                self.counts[phase] = self.counts.get(phase, 0) + n


class ScriptedBackend:
    """Deterministic offline policy standing in for the LLM.

    Output is a pure function of (seed, request text); the policy semantics
    live in trajforge.scripted.
    """

    def __init__(self, seed: int, counter: Optional[CallCounter] = None):
        self.seed = seed
        self.counter = counter or CallCounter()

    def complete(self, req: ChatRequest, phase: str = "reason") -> str:
        from .scripted import scripted_complete

        self.counter.increment(phase)
        return scripted_complete(req.system + "\n\n" + req.user, self.seed)


class HttpBackend:
    """OpenAI-compatible chat completions client.

    Transport failures and 5xx responses are retried with exponential
    backoff (3 retries by default), then raised as fatal; 4xx responses are
    fatal immediately with the response body. A semaphore caps concurrent
    in-flight requests.
    """

    def __init__(self, base_url: str, model: str, key_env: str = "TRAJFORGE_API_KEY",
                 timeout: float = 60.0, retries: int = 3, backoff_base: float = 0.5,
                 max_in_flight: int = 8, counter: Optional[CallCounter] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self.counter = counter or CallCounter()
        self._gate = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, req: ChatRequest, phase: str = "reason") -> str:
        import requests

        self.counter.increment(phase)
        payload = json.dumps(chat_request_body(req, self.model), sort_keys=True)
        last_error: Exception | None = None
        with self._gate:
            for attempt in range(self.retries + 1):
                try:
                    resp = requests.post(
                        f"{self.base_url}/chat/completions",
                        data=payload.encode("utf-8"),
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
                except requests.RequestException as exc:
                    last_error = exc
                else:
                    if 400 <= resp.status_code < 500:
                        raise BackendError(
                            f"chat request rejected ({resp.status_code}): {resp.text}")
                    if resp.status_code >= 500:
                        last_error = RuntimeError(f"server error {resp.status_code}")
                    else:
                        try:
                            return resp.json()["choices"][0]["message"]["content"]
                        except (KeyError, IndexError, TypeError, ValueError) as exc:
                            raise BackendError(f"malformed chat response: {exc}") from None
                if attempt < self.retries:
                    time.sleep(self.backoff_base * (2 ** attempt))
        raise BackendError(f"chat request failed after {self.retries} retries: {last_error}")
