"""Deterministic hashed bag-of-tokens text embedder."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import torch

_TOKEN = re.compile(r"[a-z0-9\-]+")
PAD = "<pad>"
EMPTY = "<empty>"


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class TextEmbedding:
    vectors: torch.Tensor  # [tokens, dim]
    source_text: str


@dataclass
class HashedTextEmbedder:
    """Each token maps to a fixed unit-variance vector seeded from its hash.

    Sequences are padded/truncated to ``context_len`` so batches stack; the
    empty prompt maps to a dedicated token followed by padding.
    """

    dim: int = 32
    context_len: int = 8
    seed: int = 0
    name: str = "hashed-bow"
    _cache: dict = field(default_factory=dict, repr=False)

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def embed(self, text: str, dtype=torch.float32) -> TextEmbedding:
        toks = tokenize(text)[: self.context_len] or [EMPTY]
        toks = toks + [PAD] * (self.context_len - len(toks))
        arr = np.stack([self.token_vector(t) for t in toks])
        return TextEmbedding(torch.as_tensor(arr, dtype=dtype), text)

    def embed_batch(self, texts, dtype=torch.float32) -> torch.Tensor:
        return torch.stack([self.embed(t, dtype).vectors for t in texts])
