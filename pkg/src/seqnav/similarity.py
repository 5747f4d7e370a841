"""Text/observation similarity providers."""
from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import threading
from typing import Iterable, Mapping, Optional, Sequence

import httpx
import numpy as np

_TOKEN = re.compile(r"[a-z]+")


class DegenerateInputError(ValueError):
    pass


class ProviderError(RuntimeError):
    """Remote provider failed; callers must not substitute a score."""


def tokenize(text: str) -> list:
    return _TOKEN.findall(text.lower())


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine of a zero vector")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def pose_key(pose) -> tuple:
    """Pose quantized to 0.25 m / 15 degrees."""
    return (int(round(pose.x / 0.25)), int(round(pose.y / 0.25)), int(round(pose.heading / 15.0)) % 24)


def observation_digest(obs) -> str:
    labels = sorted(obs.visible_labels)
    qx, qy, qh = pose_key(obs.pose)
    return "|".join(labels) + f"@{qx},{qy},{qh}"


class SimilarityProvider:
    """score(text, obs) -> float in [-1, 1]; must be deterministic."""

    def score(self, text: str, obs) -> float:
        raise NotImplementedError

    def score_many(self, texts: Sequence[str], obs) -> list:
        return [self.score(t, obs) for t in texts]


class SyntheticOracleProvider(SimilarityProvider):
    """Keyword-overlap similarity with seeded, truncated Gaussian noise.

    overlap is the fraction of landmarks referenced by the phrase that are
    currently visible.  Noise is keyed on the referenced landmark set and
    the quantized pose, so phrases naming the same landmarks tie exactly.
    """

    def __init__(
        self,
        keyword_map: Mapping[str, Iterable[str]],
        match_scale: float = 0.9,
        base_score: float = 0.05,
        noise_sigma: float = 0.02,
        seed: int = 0,
    ):
        self.keyword_map = {k: frozenset(v) for k, v in keyword_map.items()}
        self.match_scale = float(match_scale)
        self.base_score = float(base_score)
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        self._token_to_labels = {}
        for label, syns in self.keyword_map.items():
            for tok in syns:
                self._token_to_labels.setdefault(tok, set()).add(label)

    def references(self, text: str) -> frozenset:
        refs = set()
        for tok in tokenize(text):
            refs |= self._token_to_labels.get(tok, set())
        return frozenset(refs)

    def noise(self, key: str, pose) -> float:
        if self.noise_sigma <= 0.0:
            return 0.0
        blob = f"{self.seed}|{key}|{pose_key(pose)}".encode()
        rng = np.random.default_rng(int.from_bytes(hashlib.sha256(blob).digest()[:8], "little"))
        while True:
            z = rng.standard_normal()
            if abs(z) <= 3.0:
                return self.noise_sigma * z

    def score(self, text: str, obs) -> float:
        if not text or not text.strip():
            raise ValueError("empty phrase")
        refs = self.references(text)
        visible = obs.visible_labels
        overlap = len(refs & visible) / max(1, len(refs))
        key = "L:" + ",".join(sorted(refs)) if refs else "T:" + " ".join(sorted(set(tokenize(text))))
        s = self.base_score + self.match_scale * overlap + self.noise(key, obs.pose)
        return min(1.0, max(-1.0, s))


class RemoteEmbeddingClient(SimilarityProvider):
    """Cosine of embeddings fetched from an HTTP service.

    Wire format: POST ``{"texts": [...]}`` or ``{"tokens": [...]}``, reply
    ``{"embeddings": [[...], ...]}``.  Vectors are re-normalized locally and
    cached by text or observation digest; the optional on-disk cache is
    rewritten atomically.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 10.0,
        transport: Optional[httpx.BaseTransport] = None,
        cache_path: Optional[str] = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._lock = threading.Lock()
        self.cache: dict = {}
        self.cache_path = cache_path
        self.requests = 0
        if cache_path and os.path.exists(cache_path):
            with open(cache_path) as f:
                self.cache = {k: tuple(v) for k, v in json.load(f).items()}

    def close(self):
        self._client.close()

    def _fetch(self, payload: dict) -> list:
        try:
            r = self._client.post(self.endpoint, json=payload)
            r.raise_for_status()
            data = r.json()
        except httpx.TimeoutException as e:
            raise ProviderError(f"embedding request timed out after {self.timeout}s") from e
        except (httpx.HTTPError, ValueError) as e:
            raise ProviderError(f"embedding request failed: {e}") from e
        self.requests += 1
        emb = data.get("embeddings") if isinstance(data, dict) else None
        n = len(next(iter(payload.values())))
        if not isinstance(emb, list) or len(emb) != n:
            raise ProviderError("malformed embedding response")
        out = []
        for vec in emb:
            try:
                v = np.asarray(vec, dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise ProviderError("non-numeric embedding") from e
            norm = np.linalg.norm(v) if v.ndim == 1 else 0.0
            if v.ndim != 1 or norm == 0.0 or not np.isfinite(norm):
                raise ProviderError("degenerate embedding in response")
            out.append(tuple((v / norm).tolist()))
        return out

    def _store(self, items: dict):
        with self._lock:
            for k, v in items.items():
                self.cache.setdefault(k, v)
            if self.cache_path:
                d = os.path.dirname(os.path.abspath(self.cache_path))
                fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
                with os.fdopen(fd, "w") as f:
                    json.dump(self.cache, f, sort_keys=True)
                os.replace(tmp, self.cache_path)

    def embed_texts(self, texts: Sequence[str]) -> list:
        keys = ["text:" + t for t in texts]
        missing = sorted({t for t, k in zip(texts, keys) if k not in self.cache})
        if missing:
            vecs = self._fetch({"texts": missing})
            self._store({"text:" + t: v for t, v in zip(missing, vecs)})
        return [self.cache[k] for k in keys]

    def embed_observation(self, obs) -> tuple:
        digest = observation_digest(obs)
        key = "obs:" + digest
        if key not in self.cache:
            (vec,) = self._fetch({"tokens": [digest]})
            self._store({key: vec})
        return self.cache[key]

    def score(self, text: str, obs) -> float:
        return self.score_many([text], obs)[0]

    def score_many(self, texts: Sequence[str], obs) -> list:
        if any(not t or not t.strip() for t in texts):
            raise ValueError("empty phrase")
        ov = self.embed_observation(obs)
        return [cosine(tv, ov) for tv in self.embed_texts(texts)]
