"""Latent codec slot and the default block-average codec.

Images live in [0, 1]; latents in [-1, 1].  The block codec encodes by
averaging ``factor x factor`` blocks of ``2x - 1`` and decodes with
nearest-neighbour upsampling, so it is exact on block-constant images.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class BlockCodec:
    factor: int = 4
    channels: int = 3
    name: str = "block-average"

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        """[B, C, H, W] pixels in [0,1] -> [B, C, H/f, W/f] latents."""
        if img.ndim != 4 or img.shape[1] != self.channels:
            raise SpaceError(f"expected pixel batch [B,{self.channels},H,W], got {tuple(img.shape)}")
        h, w = img.shape[-2:]
        if h % self.factor or w % self.factor:
            raise SpaceError(f"image size {h}x{w} not divisible by codec factor {self.factor}")
        return F.avg_pool2d(2.0 * img - 1.0, self.factor)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise SpaceError(f"expected latent batch [B,{self.channels},h,w], got {tuple(z.shape)}")
        up = z.repeat_interleave(self.factor, dim=-2).repeat_interleave(self.factor, dim=-1)
        return (up + 1.0) / 2.0

    def downsample_mask(self, mask: torch.Tensor) -> torch.Tensor:
        """Area-average a [B,1,H,W] binary mask to latent size, then threshold at 0.5."""
        return (F.avg_pool2d(mask, self.factor) >= 0.5).to(mask.dtype)

    def downsample(self, x: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(x, self.factor)

    def roundtrip_bound(self, img: torch.Tensor) -> torch.Tensor:
        """Max |decode(encode(x)) - x| cannot exceed the largest per-block value range."""
        mx = F.max_pool2d(img, self.factor)
        mn = -F.max_pool2d(-img, self.factor)
        return (mx - mn).amax()
