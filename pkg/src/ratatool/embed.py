"""Embedding providers and the on-disk embedding cache.

Every provider exposes ``provider_id``, ``model_id`` and
``embed(texts) -> list[EmbeddingVector]``. Vectors from both bundled
providers are unit-normalized, so inner products are cosines.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .errors import ApiError, CacheCorruption, ConfigError, DataError, DimensionMismatch

log = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    provider_id: str
    model_id: str

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise DimensionMismatch("embedding has zero dimensions")
        if not all(math.isfinite(v) for v in values):
            raise DataError("embedding has non-finite components")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))


class Provider(Protocol):
    provider_id: str
    model_id: str

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def hash_embed(text: str, dim: int) -> tuple[float, ...]:
    counts = [0] * dim
    for tok in tokenize(text):
        h = fnv1a_64(tok.encode("utf-8"))
        counts[h % dim] += -1 if (h >> 32) & 1 else 1
    sumsq = sum(c * c for c in counts)
    if sumsq == 0:
        return (1.0,) + (0.0,) * (dim - 1)
    # integer sum of squares keeps the norm exact up to the single sqrt rounding
    norm = math.sqrt(sumsq)
    return tuple(c / norm for c in counts)


class LocalEmbedder:
    """Signed feature-hashing embedder; a pure function of (text, dim)."""

    normalized = True

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ConfigError(f"local embedder dim must be >= 8, got {dim}")
        self.dim = dim
        self.provider_id = "local"
        self.model_id = f"fnv1a-signed-{dim}"

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [EmbeddingVector(hash_embed(t, self.dim), self.provider_id, self.model_id) for t in texts]


def embed_local(texts: Sequence[str], dim: int) -> list[EmbeddingVector]:
    return LocalEmbedder(dim).embed(texts)


def normalize(values: Sequence[float]) -> tuple[float, ...]:
    norm = math.sqrt(math.fsum(v * v for v in values))
    if norm == 0.0:
        raise ApiError(None, "provider returned a zero-norm embedding")
    return tuple(v / norm for v in values)


class RemoteEmbedder:
    """Client for an OpenAI-style ``/embeddings`` endpoint.

    Request ``{"model", "input"}``; response ``{"data": [{"index", "embedding"}]}``.
    Batches are split at ``batch_size`` and sent with up to ``parallelism``
    requests in flight.
    """

    normalized = True

    def __init__(self, endpoint: str, model_id: str, token: str | None = None, *, batch_size: int = 64,
                 parallelism: int = 4, attempts: int = 3, base_delay: float = 0.5, timeout: float = 60.0,
                 session: requests.Session | None = None, sleep: Callable[[float], None] = time.sleep):
        if not endpoint:
            raise ConfigError("embedding endpoint not configured (RATATOOL_EMBED_URL)")
        if not model_id:
            raise ConfigError("embedding model not configured (RATATOOL_EMBED_MODEL)")
        self.endpoint = endpoint
        self.model_id = model_id
        self.provider_id = f"remote:{endpoint}"
        self.token = token
        self.batch_size = batch_size
        self.parallelism = max(1, parallelism)
        self.attempts = attempts
        self.base_delay = base_delay
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep

    @classmethod
    def from_env(cls, env=None, **kwargs) -> "RemoteEmbedder":
        env = os.environ if env is None else env
        return cls(env.get("RATATOOL_EMBED_URL", ""), env.get("RATATOOL_EMBED_MODEL", ""),
                   env.get("RATATOOL_EMBED_TOKEN"), **kwargs)

    def _post(self, texts: list[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = {"model": self.model_id, "input": texts}
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.base_delay * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = ApiError(None, str(exc))
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ApiError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise ApiError(resp.status_code, resp.text)
            try:
                data = sorted(resp.json()["data"], key=lambda d: d["index"])
                rows = [[float(x) for x in d["embedding"]] for d in data]
            except (ValueError, KeyError, TypeError) as exc:
                raise ApiError(resp.status_code, f"malformed response: {exc}") from None
            if len(rows) != len(texts):
                raise ApiError(resp.status_code, f"expected {len(texts)} embeddings, got {len(rows)}")
            return rows
        assert last is not None
        raise last

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        if not texts:
            return []
        if any(not t for t in texts):
            raise DataError("cannot embed an empty text")
        batches = [texts[i:i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            rows = [row for batch in pool.map(self._post, batches) for row in batch]
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise DimensionMismatch(f"provider returned mixed dimensions {sorted(dims)}")
        return [EmbeddingVector(normalize(r), self.provider_id, self.model_id) for r in rows]


# -- cache ------------------------------------------------------------------

def cache_key(provider_id: str, model_id: str, text: str) -> str:
    blob = b"\x1f".join(s.encode("utf-8") for s in (provider_id, model_id, text))
    return hashlib.sha256(blob).hexdigest()


def _format_values(values: Sequence[float]) -> str:
    return "[" + ", ".join(format(v, ".17g") for v in values) + "]"


class EmbeddingCache:
    """Append-only JSONL store keyed by :func:`cache_key`.

    The file is read once at construction; appends go through one lock.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, EmbeddingVector] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    vec = EmbeddingVector(rec["values"], rec["provider_id"], rec["model_id"])
                    if vec.dim != rec["dim"]:
                        raise ValueError("dim does not match values")
                    self._entries[rec["key"]] = vec
                except (ValueError, KeyError, TypeError, DataError) as exc:
                    raise CacheCorruption(str(self.path), lineno, str(exc)) from None

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> EmbeddingVector | None:
        return self._entries.get(key)

    def put(self, key: str, vec: EmbeddingVector) -> None:
        line = ('{"key": %s, "dim": %d, "values": %s, "provider_id": %s, "model_id": %s}\n'
                % (json.dumps(key), vec.dim, _format_values(vec.values),
                   json.dumps(vec.provider_id, ensure_ascii=False), json.dumps(vec.model_id, ensure_ascii=False)))
        with self._lock:
            if key in self._entries:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line)
            self._entries[key] = vec


def cache_get_or_embed(text: str, provider: Provider, cache: EmbeddingCache) -> EmbeddingVector:
    key = cache_key(provider.provider_id, provider.model_id, text)
    hit = cache.get(key)
    if hit is not None:
        return hit
    vec = provider.embed([text])[0]
    cache.put(key, vec)
    return vec


class CachedProvider:
    """Wraps a provider so every text is looked up in the cache first."""

    def __init__(self, inner: Provider, cache: EmbeddingCache):
        self.inner = inner
        self.cache = cache
        self.provider_id = inner.provider_id
        self.model_id = inner.model_id

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        keys = [cache_key(self.provider_id, self.model_id, t) for t in texts]
        missing = sorted({t for t, k in zip(texts, keys) if self.cache.get(k) is None})
        if missing:
            for text, vec in zip(missing, self.inner.embed(missing)):
                self.cache.put(cache_key(self.provider_id, self.model_id, text), vec)
        return [self.cache.get(k) for k in keys]
