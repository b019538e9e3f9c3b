"""Scaled dot-product attention and the two garment-injection variants."""

from __future__ import annotations

import math

import torch


def _check(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> None:
    if q.shape[-1] != k.shape[-1] or k.shape[-1] != v.shape[-1]:
        raise ValueError(
            f"head dimension mismatch: q {q.shape[-1]}, k {k.shape[-1]}, v {v.shape[-1]}"
        )
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("K and V must have the same sequence length")


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int = 1) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d)) V over the last two axes.

    Leading axes are batch axes.  With ``heads > 1`` the feature axis is split
    into equal chunks and each chunk attends independently.
    """
    _check(q, k, v)
    d = q.shape[-1]
    if heads == 1:
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        return w @ v
    if d % heads:
        raise ValueError(f"dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x):
        return x.reshape(*x.shape[:-1], heads, dh).transpose(-2, -3)

    out = attention(split(q), split(k), split(v))
    return out.transpose(-2, -3).reshape(*q.shape[:-1], d)


def asa(q_u, k_u, v_u, k_g, v_g, heads: int = 1, scale: float = 1.0) -> torch.Tensor:
    """Additive self-attention: own-sequence attention plus garment attention."""
    _check(q_u, k_g, v_g)
    out = attention(q_u, k_u, v_u, heads)
    if scale != 0.0:
        out = out + scale * attention(q_u, k_g, v_g, heads)
    return out


def csa(q_u, k_u, v_u, k_g, v_g, heads: int = 1) -> torch.Tensor:
    """Concatenated self-attention: garment keys/values appended along the sequence axis."""
    _check(q_u, k_g, v_g)
    if k_g.shape[-2] == 0:
        return attention(q_u, k_u, v_u, heads)
    return attention(q_u, torch.cat([k_u, k_g], dim=-2), torch.cat([v_u, v_g], dim=-2), heads)
