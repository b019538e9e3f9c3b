"""Garment UNet: a trainable copy of the denoiser that emits per-site keys/values."""

from __future__ import annotations

import copy

import torch
import torch.nn as nn

from .attention import asa, csa  # noqa: F401  (re-exported)
from .unet import GarmentKV, MiniUNet, UNetConfig

__all__ = ["GarmentEncoder", "GarmentKV", "asa", "csa", "encode_garment"]

# parts of the last attention site that never influence its K/V
_LAST_SITE_UNUSED = ("to_q", "to_out", "norm2", "cq", "ck", "cv", "c_out", "norm3", "ff")


class GarmentEncoder(nn.Module):
    """Copy of a denoiser truncated after the last K/V tap.

    Modules that cannot influence any emitted K/V (output head, the
    query/output side of the last site) are dropped so that every parameter
    held here receives gradient from a downstream loss.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        self.unet = MiniUNet(config)
        self._prune()

    @classmethod
    def from_denoiser(cls, denoiser: MiniUNet) -> "GarmentEncoder":
        enc = cls(denoiser.config)
        src = copy.deepcopy(denoiser.state_dict())
        missing = enc.unet.load_state_dict(src, strict=False)
        if missing.missing_keys:
            raise RuntimeError(f"copy failed, missing {missing.missing_keys}")
        return enc.to(next(denoiser.parameters()).dtype)

    def _prune(self):
        u = self.unet
        last = u.site_module(self.config.attention_sites[-1])
        for name in _LAST_SITE_UNUSED:
            setattr(last, name, None)
        if last is u.mid_attn:
            u.mid_res2 = None
        u.norm_out = None
        u.conv_out = None

    def forward(self, garment_latent: torch.Tensor, t, garment_context: torch.Tensor) -> GarmentKV:
        return GarmentKV(self.unet.collect_kv(garment_latent, t, garment_context), t)


def encode_garment(encoder: GarmentEncoder, codec, garment_img, garment_prompt, t) -> GarmentKV:
    """Encode a pixel-space garment batch and its category-prompt context into K/V pairs."""
    return encoder(codec.encode(garment_img), t, garment_prompt)
