"""Text embeddings for semantic comparison of knowledge bases.

Two providers share one interface: a deterministic offline embedder that
hashes character trigrams into a fixed-width bag vector, and a remote
embedder speaking the OpenAI embeddings wire format. A newline-delimited
JSON cache keeps repeat comparisons from re-embedding unchanged rows.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np
import requests

from .gateway import API_KEY_ENV, GatewayError, TransportError

EMBED_DIM = 384

# Sentinels mark label boundaries so "abc" and "xabcx" share fewer grams.
_START = "\x02"
_END = "\x03"


class EmbeddingProvider(Protocol):
    provider_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return one float64 row per input text, in input order."""
        ...


def _trigrams(text: str) -> list[str]:
    padded = _START + text + _END
    if len(padded) < 3:
        return [padded]
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


class TrigramHashEmbedder:
    """Offline, deterministic embedder: hashed character-trigram counts.

    Not a semantic model. Identical strings map to identical vectors and
    near-identical strings land close, which is what the offline test path
    needs; anything meaning-aware must come from a remote provider.
    """

    def __init__(self, dim: int = EMBED_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.provider_id = f"trigram-{dim}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for gram in _trigrams(text):
                out[row, self._bucket(gram)] += 1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return out


class RemoteEmbedder:
    """OpenAI-compatible /embeddings client. Rows come back in input order."""

    def __init__(
        self,
        endpoint_url: str,
        model_id: str = "text-embedding-3-small",
        api_key: Optional[str] = None,
        request_timeout_seconds: float = 60.0,
        max_retries: int = 2,
        batch_size: int = 256,
        sleep=time.sleep,
    ):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not key:
            raise GatewayError(
                f"no API key: pass api_key or set {API_KEY_ENV} in the environment"
            )
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model_id = model_id
        self.provider_id = f"remote-{model_id}"
        self.timeout = request_timeout_seconds
        self.max_retries = max_retries
        self.batch_size = batch_size
        self._sleep = sleep
        self._session = requests.Session()
        self._session.headers["Authorization"] = f"Bearer {key}"

    def _post(self, batch: Sequence[str]) -> list[list[float]]:
        last: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    f"{self.endpoint_url}/embeddings",
                    json={"model": self.model_id, "input": list(batch)},
                    timeout=self.timeout,
                )
                if resp.status_code >= 400:
                    raise TransportError(
                        f"embeddings endpoint returned {resp.status_code}: "
                        f"{resp.text[:200]}"
                    )
                data = resp.json()["data"]
                rows = sorted(data, key=lambda item: item["index"])
                return [row["embedding"] for row in rows]
            except (requests.RequestException, TransportError, KeyError) as exc:
                last = exc if isinstance(exc, TransportError) else TransportError(str(exc))
                if attempt < self.max_retries:
                    self._sleep(0.5 * (2**attempt))
        assert last is not None
        raise last

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0), dtype=np.float64)
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            rows.extend(self._post(texts[start : start + self.batch_size]))
        return np.asarray(rows, dtype=np.float64)


class EmbeddingCache:
    """Append-only NDJSON store keyed by (provider_id, text)."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._vectors: dict[tuple[str, str], np.ndarray] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    key = (entry["provider"], entry["text"])
                    self._vectors[key] = np.asarray(entry["vector"], dtype=np.float64)

    def get(self, provider_id: str, text: str) -> Optional[np.ndarray]:
        return self._vectors.get((provider_id, text))

    def put_many(self, provider_id: str, items: Iterable[tuple[str, np.ndarray]]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            for text, vector in items:
                self._vectors[(provider_id, text)] = np.asarray(vector, dtype=np.float64)
                handle.write(
                    json.dumps(
                        {
                            "provider": provider_id,
                            "text": text,
                            "vector": [float(x) for x in vector],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )


def embed_batch(
    texts: Sequence[str],
    provider: EmbeddingProvider,
    cache: Optional[EmbeddingCache] = None,
) -> np.ndarray:
    """Embed texts through the cache; only misses reach the provider."""
    if not texts:
        dim = getattr(provider, "dim", EMBED_DIM)
        return np.zeros((0, dim), dtype=np.float64)
    if cache is None:
        return provider.embed(texts)

    misses: list[str] = []
    seen: set[str] = set()
    for text in texts:
        if text in seen:
            continue
        seen.add(text)
        if cache.get(provider.provider_id, text) is None:
            misses.append(text)
    if misses:
        fresh = provider.embed(misses)
        cache.put_many(provider.provider_id, zip(misses, fresh))

    rows = [cache.get(provider.provider_id, text) for text in texts]
    assert all(row is not None for row in rows)
    return np.vstack(rows)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors; zero vectors compare as 0.0."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    value = float(np.dot(u, v) / (nu * nv))
    return max(-1.0, min(1.0, value))


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    return 1.0 - cosine_similarity(u, v)


def pairwise_cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Similarity matrix between row sets: out[i, j] = cos(a[i], b[j])."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("expected 2-D row matrices")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    an = np.divide(a, na, out=np.zeros_like(a, dtype=np.float64), where=na > 0)
    bn = np.divide(b, nb, out=np.zeros_like(b, dtype=np.float64), where=nb > 0)
    return np.clip(an @ bn.T, -1.0, 1.0)
