"""Entity embedding providers.

The default provider is a deterministic stand-in for a real image/text
encoder: it hashes the input string to seed an RNG and draws a unit-norm
vector, and its text-to-image prior is a fixed seeded orthogonal transform.
Real encoders can be plugged in behind the same interface; everything
downstream only relies on determinism and the text->image kind mapping.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

DEFAULT_EMBED_DIM = 32


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray  # float64, shape (dim,)
    kind: str  # "text" | "image"

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class EmbeddingProvider(Protocol):
    def embed_text(self, text: str) -> EmbeddingVector: ...

    def embed_image_crop(self, handle: object) -> EmbeddingVector: ...

    def prior_text_to_image(self, emb: EmbeddingVector) -> EmbeddingVector: ...


def _seed_from(seed: int, namespace: str, payload: str) -> int:
    digest = hashlib.blake2b(
        payload.encode("utf-8"), digest_size=8, key=f"{namespace}:{seed}".encode("utf-8")
    ).digest()
    return int.from_bytes(digest, "little")


class HashEmbeddingProvider:
    """Seeded hash-to-unit-sphere pseudo-embeddings."""

    def __init__(self, dim: int = DEFAULT_EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        # Orthogonal prior: kind-preservingly rotates text embeddings into
        # "image space" without changing norms.
        rng = np.random.default_rng(_seed_from(seed, "prior", ""))
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self._prior = q

    def _draw(self, namespace: str, payload: str, kind: str) -> EmbeddingVector:
        rng = np.random.default_rng(_seed_from(self.seed, namespace, payload))
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        return EmbeddingVector(values=v, kind=kind)

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._draw("text", text, "text")

    def embed_image_crop(self, handle: object) -> EmbeddingVector:
        return self._draw("image", str(handle), "image")

    def prior_text_to_image(self, emb: EmbeddingVector) -> EmbeddingVector:
        if emb.kind != "text":
            raise ValueError(f"prior expects a text embedding, got {emb.kind!r}")
        return EmbeddingVector(values=self._prior @ emb.values, kind="image")
