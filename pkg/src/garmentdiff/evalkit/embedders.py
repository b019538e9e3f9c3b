"""Embedder slot for identity / similarity metrics and the toy default."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..text import HashedTextEmbedder, tokenize


@dataclass
class Embedder:
    id: str
    dim: int
    embed_image: Callable[[np.ndarray], np.ndarray]
    embed_text: Optional[Callable[[str], np.ndarray]] = None


def _pool(img: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = img.shape
    hh, ww = h // factor, w // factor
    return img[:, : hh * factor, : ww * factor].reshape(c, hh, factor, ww, factor).mean(axis=(2, 4))


def toy_embedder(dim: int = 64, pool: int = 8, seed: int = 0, image_size: int = 32, channels: int = 3) -> Embedder:
    """Average-pool by ``pool``, project with a fixed seeded Gaussian matrix, L2-normalise."""
    n_in = channels * (image_size // pool) ** 2
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)
    words = HashedTextEmbedder(dim=dim, seed=seed + 1)

    def embed_image(img):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (channels, image_size, image_size):
            raise ValueError(f"toy embedder expects {(channels, image_size, image_size)}, got {img.shape}")
        v = _pool(img, pool).ravel() @ proj
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def embed_text(text):
        toks = tokenize(text)
        if not toks:
            return np.zeros(dim)
        v = np.mean([words.token_vector(t) for t in toks], axis=0)
        return v / np.linalg.norm(v)

    return Embedder(f"toy-pool{pool}-proj{dim}-s{seed}", dim, embed_image, embed_text)

