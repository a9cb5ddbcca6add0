"""Text embeddings for retrieval keys.

Two embedders share one contract: map a string to a unit-norm float vector
of fixed dimension, deterministically. The built-in embedder is a feature
hashing bag-of-tokens (no model weights, identical output on every platform);
the remote embedder speaks an OpenAI-compatible /embeddings endpoint for runs
that want a neural model. Empty text maps to the all-zeros "null embedding",
which is exempt from the unit-norm invariant and has similarity 0 to
everything.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import threading
import time
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

ROLE_GOAL = "goal"
ROLE_PLAN = "plan"
ROLE_OBSERVATION = "observation"
ROLE_REASONING = "reasoning"
ROLE_CATEGORY = "category"
FIELD_ROLES = (ROLE_GOAL, ROLE_PLAN, ROLE_OBSERVATION, ROLE_REASONING, ROLE_CATEGORY)

NORM_TOLERANCE = 1e-6

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def is_null_embedding(v: np.ndarray) -> bool:
    return not np.any(v)


def check_embedding(v: np.ndarray) -> None:
    """Raise if a non-null embedding violates the unit-norm invariant."""
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding contains NaN or Inf")
    if is_null_embedding(v):
        return
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ValueError(f"embedding norm {norm} outside unit tolerance")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either side is the null embedding."""
    if a.shape != b.shape:
        raise ValueError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _bucket(token: str, dim: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=b"tf-bucket").digest()
    return int.from_bytes(h, "big") % dim


def _sign(token: str) -> float:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=b"tf-sign").digest()
    return 1.0 if h[0] & 1 else -1.0


class BuiltinEmbedder:
    """Deterministic feature-hashing bag-of-tokens embedder.

    Lowercase, split on non-alphanumerics, hash each token into one of
    embed_dim buckets with a +/-1 sign from a second hash, then L2-normalize.
    Adequate for lexical-similarity retrieval in the offline harness.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim

    @property
    def fingerprint(self) -> str:
        return f"builtin-hash-v1:{self.dim}"

    def embed(self, text: str, role: str) -> np.ndarray:
        del role  # one shared embedding space; role only keys the cache
        v = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_SPLIT.split(text.lower()):
            if token:
                v[_bucket(token, self.dim)] += _sign(token)
        norm = math.sqrt(float(np.dot(v, v)))
        if norm > 0.0:
            v /= norm
        return v

    def embed_batch(self, texts: list[str], role: str) -> list[np.ndarray]:
        return [self.embed(t, role) for t in texts]


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Batches at most 128 texts per call and retries transport failures with
    exponential backoff. The output dimension is taken from the first
    response and pinned thereafter.
    """

    MAX_BATCH = 128

    def __init__(self, base_url: str, model: str, key_env: str = "TRAJFORGE_EMBED_KEY",
                 timeout: float = 30.0, retries: int = 3, backoff_base: float = 0.5):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self.dim: Optional[int] = None

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.model}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.key_env) or os.environ.get("TRAJFORGE_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_batch(self, texts: list[str]) -> list[np.ndarray]:
        import requests

        body = {"model": self.model, "input": texts}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(f"{self.base_url}/embeddings", json=body,
                                     headers=self._headers(), timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code >= 500:
                    last_error = RuntimeError(f"embeddings server error {resp.status_code}")
                elif resp.status_code >= 400:
                    raise RuntimeError(
                        f"embeddings request rejected ({resp.status_code}): {resp.text}")
                else:
                    return self._decode(resp, len(texts))
            if attempt < self.retries:
                time.sleep(self.backoff_base * (2 ** attempt))
        raise RuntimeError(f"embeddings request failed after {self.retries} retries: {last_error}")

    def _decode(self, resp, expected: int) -> list[np.ndarray]:
        try:
            data = resp.json()["data"]
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise RuntimeError(f"malformed embeddings response: {exc}") from None
        if len(vectors) != expected:
            raise RuntimeError(
                f"malformed embeddings response: got {len(vectors)} vectors for {expected} inputs")
        out = []
        for v in vectors:
            if self.dim is None:
                self.dim = v.shape[0]
            elif v.shape[0] != self.dim:
                raise RuntimeError(
                    f"embedding dimension changed mid-run: {v.shape[0]} != {self.dim}")
            norm = float(np.linalg.norm(v))
            out.append(v / norm if norm > 0 else v)
        return out

    def embed(self, text: str, role: str) -> np.ndarray:
        return self.embed_batch([text], role)[0]

    def embed_batch(self, texts: list[str], role: str) -> list[np.ndarray]:
        del role
        results: list[np.ndarray] = []
        nonempty = [t for t in texts if t]
        remote: list[np.ndarray] = []
        for i in range(0, len(nonempty), self.MAX_BATCH):
            remote.extend(self._post_batch(nonempty[i:i + self.MAX_BATCH]))
        it = iter(remote)
        for t in texts:
            if t:
                results.append(next(it))
            else:
                results.append(np.zeros(self.dim or 1, dtype=np.float64))
        return results


class EmbeddingCache:
    """Map (field_role, text) -> embedding, shared across databases.

    A cache hit returns a value bit-identical to a fresh computation under
    the same embedder. Reads are lock-free; writes are serialized.
    """

    def __init__(self, embedder):
        self.embedder = embedder
        self._store: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(role: str, text: str) -> tuple[str, str]:
        return (role, hashlib.sha256(text.encode("utf-8")).hexdigest())

    def __len__(self) -> int:
        return len(self._store)

    def embed(self, text: str, role: str) -> np.ndarray:
        if role not in FIELD_ROLES:
            raise ValueError(f"unknown field role {role!r}")
        key = self._key(role, text)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        v = self.embedder.embed(text, role)
        check_embedding(v)
        v.setflags(write=False)
        with self._lock:
            self._store.setdefault(key, v)
        return self._store[key]

    def put(self, text: str, role: str, v: np.ndarray) -> None:
        """Preload a vector (e.g. from a saved database with inlined embeddings)."""
        check_embedding(v)
        v = np.asarray(v, dtype=np.float64)
        v.setflags(write=False)
        with self._lock:
            self._store[self._key(role, text)] = v
