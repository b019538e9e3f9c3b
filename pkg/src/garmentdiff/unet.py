"""Instrumentable mini UNet denoiser.

Each encoder level, the middle block and each decoder level own one
transformer-style attention site (self attention, text cross attention,
feed-forward).  Sites are named ``down{i}``, ``mid`` and ``up{i}``, in
execution order; the self-attention step of each
site accepts garment keys/values (additive or concatenated).  Decoder skip
features are named ``skip0 ..`` plus ``mid`` and accept additive residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import asa, attention, csa

ATTENTION_MODES = ("none", "asa", "csa")


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    depth: int = 2
    base_channels: int = 32
    embedding_dim: int = 32
    time_embedding_dim: int = 128
    heads: int = 1
    groups: int = 8

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def attention_sites(self) -> tuple[str, ...]:
        down = tuple(f"down{i}" for i in range(self.depth - 1))
        up = tuple(f"up{i}" for i in reversed(range(self.depth - 1)))
        return down + ("mid",) + up

    @property
    def skip_sites(self) -> tuple[str, ...]:
        return tuple(f"skip{i}" for i in range(self.depth - 1)) + ("mid",)

    def level_channels(self, i: int) -> int:
        return self.base_channels * min(2**i, 4)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GarmentKV:
    """Per-site (K, V) pairs, each [B, s_g, d]."""

    sites: dict[str, tuple[torch.Tensor, torch.Tensor]]
    timestep_used: object = None

    def repeat(self, n: int) -> "GarmentKV":
        return GarmentKV(
            {k: (kk.repeat(n, 1, 1), vv.repeat(n, 1, 1)) for k, (kk, vv) in self.sites.items()},
            self.timestep_used,
        )

    def zero_values(self) -> "GarmentKV":
        return GarmentKV({k: (kk, torch.zeros_like(vv)) for k, (kk, vv) in self.sites.items()}, self.timestep_used)


@dataclass
class ControlResiduals:
    sites: dict[str, torch.Tensor]

    def scaled(self, a: float) -> "ControlResiduals":
        return ControlResiduals({k: a * v for k, v in self.sites.items()})

    def repeat(self, n: int) -> "ControlResiduals":
        return ControlResiduals({k: v.repeat(n, 1, 1, 1) for k, v in self.sites.items()})


@dataclass
class InjectionSet:
    garment_kv: Optional[GarmentKV] = None
    control_residuals: Optional[ControlResiduals] = None
    attention_mode: str = "none"
    garment_scale: float = 1.0


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    return emb


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(min(groups, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class AttentionSite(nn.Module):
    def __init__(self, ch: int, ctx_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(ch)
        self.to_q = nn.Linear(ch, ch, bias=False)
        self.to_k = nn.Linear(ch, ch, bias=False)
        self.to_v = nn.Linear(ch, ch, bias=False)
        self.to_out = nn.Linear(ch, ch)
        self.norm2 = nn.LayerNorm(ch)
        self.cq = nn.Linear(ch, ch, bias=False)
        self.ck = nn.Linear(ctx_dim, ch, bias=False)
        self.cv = nn.Linear(ctx_dim, ch, bias=False)
        self.c_out = nn.Linear(ch, ch)
        self.norm3 = nn.LayerNorm(ch)
        self.ff = nn.Sequential(nn.Linear(ch, 2 * ch), nn.GELU(), nn.Linear(2 * ch, ch))

    def kv(self, x: torch.Tensor):
        """Keys/values of the self-attention step for a [B, C, H, W] input."""
        tokens = x.flatten(2).transpose(1, 2)
        h = self.norm1(tokens)
        return self.to_k(h), self.to_v(h)

    def forward(self, x, context, garment=None, mode="none", scale=1.0):
        b, c, hh, ww = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        h = self.norm1(tokens)
        q, k, v = self.to_q(h), self.to_k(h), self.to_v(h)
        if mode == "none" or garment is None:
            sa = attention(q, k, v, self.heads)
        elif mode == "asa":
            sa = asa(q, k, v, garment[0], garment[1], self.heads, scale)
        elif mode == "csa":
            sa = csa(q, k, v, garment[0], garment[1], self.heads)
        else:
            raise InjectionError(f"unknown attention mode {mode!r}")
        tokens = tokens + self.to_out(sa)
        h = self.norm2(tokens)
        tokens = tokens + self.c_out(attention(self.cq(h), self.ck(context), self.cv(context), self.heads))
        tokens = tokens + self.ff(self.norm3(tokens))
        return tokens.transpose(1, 2).reshape(b, c, hh, ww)


class MiniUNet(nn.Module):
    def __init__(self, config: UNetConfig = UNetConfig(), extra_in_channels: int = 0, encoder_only: bool = False):
        super().__init__()
        self.config = cfg = config
        self.encoder_only = encoder_only
        tdim = cfg.time_embedding_dim
        c0 = cfg.base_channels
        self.time_mlp = nn.Sequential(nn.Linear(c0, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.conv_in = nn.Conv2d(cfg.in_channels + extra_in_channels, c0, 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = c0
        for i in range(cfg.depth - 1):
            ch = cfg.level_channels(i)
            self.down_res.append(ResBlock(prev, ch, tdim, cfg.groups))
            self.down_attn.append(AttentionSite(ch, cfg.embedding_dim, cfg.heads))
            self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        cm = cfg.level_channels(cfg.depth - 1)
        self.mid_res1 = ResBlock(prev, cm, tdim, cfg.groups)
        self.mid_attn = AttentionSite(cm, cfg.embedding_dim, cfg.heads)
        self.mid_res2 = ResBlock(cm, cm, tdim, cfg.groups)

        if not encoder_only:
            self.up_conv = nn.ModuleList()
            self.up_res = nn.ModuleList()
            self.up_attn = nn.ModuleList()
            up_prev = cm
            for i in reversed(range(cfg.depth - 1)):
                ch = cfg.level_channels(i)
                self.up_conv.append(nn.Conv2d(up_prev, ch, 3, padding=1))
                self.up_res.append(ResBlock(2 * ch, ch, tdim, cfg.groups))
                self.up_attn.append(AttentionSite(ch, cfg.embedding_dim, cfg.heads))
                up_prev = ch
            self.norm_out = nn.GroupNorm(min(cfg.groups, c0), c0)
            self.conv_out = nn.Conv2d(up_prev, cfg.in_channels, 3, padding=1)

    # -- helpers ----------------------------------------------------------
    def site_module(self, name: str) -> AttentionSite:
        if name == "mid":
            return self.mid_attn
        if name.startswith("up"):
            return self.up_attn[self.config.depth - 2 - int(name[2:])]
        return self.down_attn[int(name[4:])]

    def _temb(self, t, x):
        if not isinstance(t, torch.Tensor) or t.ndim == 0:
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        emb = timestep_embedding(t, self.config.base_channels).to(x.dtype)
        return self.time_mlp(emb)

    def _check_input(self, x):
        f = 2 ** (self.config.depth - 1)
        if x.ndim != 4 or x.shape[-1] % f or x.shape[-2] % f:
            raise ValueError(f"latent shape {tuple(x.shape)} incompatible with depth {self.config.depth}")

    def _check_injection(self, inj: InjectionSet):
        if inj.attention_mode not in ATTENTION_MODES:
            raise InjectionError(f"unknown attention mode {inj.attention_mode!r}")
        if inj.attention_mode != "none":
            if inj.garment_kv is None:
                raise InjectionError(f"attention_mode={inj.attention_mode} requires garment_kv")
            unknown = set(inj.garment_kv.sites) - set(self.config.attention_sites)
            if unknown:
                raise InjectionError(f"unknown attention sites {sorted(unknown)}")
        if inj.control_residuals is not None:
            unknown = set(inj.control_residuals.sites) - set(self.config.skip_sites)
            if unknown:
                raise InjectionError(f"unknown skip sites {sorted(unknown)}")

    # -- passes -----------------------------------------------------------
    def _site(self, name, h, context, inj, kvs):
        mod = self.site_module(name)
        if kvs is not None:
            kvs[name] = mod.kv(h)
            if name == self.config.attention_sites[-1]:
                return None
        g = inj.garment_kv.sites.get(name) if inj.garment_kv is not None else None
        return mod(h, context, g, inj.attention_mode, inj.garment_scale)

    def encode(self, x, t, context, inj: InjectionSet | None = None, kvs: dict | None = None):
        """Encoder half + middle block; returns (skip feature dict, mid feature, temb).

        When ``kvs`` is a dict, each site's input K/V is recorded into it.
        """
        inj = inj or InjectionSet()
        temb = self._temb(t, x)
        h = self.conv_in(x)
        skips = {}
        for i in range(self.config.depth - 1):
            h = self.down_res[i](h, temb)
            h = self._site(f"down{i}", h, context, inj, kvs)
            skips[f"skip{i}"] = h
            h = self.downsample[i](h)
        h = self.mid_res1(h, temb)
        h = self._site("mid", h, context, inj, kvs)
        if h is None:
            return skips, None, temb
        h = self.mid_res2(h, temb)
        return skips, h, temb

    def decode(self, skips, h, temb, context, inj: InjectionSet, kvs: dict | None = None):
        res = inj.control_residuals.sites if inj.control_residuals is not None else {}
        if "mid" in res:
            h = h + res["mid"]
        for j, i in enumerate(reversed(range(self.config.depth - 1))):
            h = F.interpolate(h, scale_factor=2.0, mode="nearest")
            h = self.up_conv[j](h)
            skip = skips[f"skip{i}"]
            if f"skip{i}" in res:
                skip = skip + res[f"skip{i}"]
            h = self.up_res[j](torch.cat([h, skip], dim=1), temb)
            h = self._site(f"up{i}", h, context, inj, kvs)
            if h is None:
                return None
        return self.conv_out(F.silu(self.norm_out(h)))

    def collect_kv(self, x, t, context) -> dict:
        """K/V at the input of every attention site, stopping after the last tap."""
        kvs: dict = {}
        inj = InjectionSet()
        skips, h, temb = self.encode(x, t, context, inj, kvs)
        if h is not None:
            self.decode(skips, h, temb, context, inj, kvs)
        return kvs

    def forward(self, x, t, context, inj: InjectionSet | None = None):
        inj = inj or InjectionSet()
        self._check_input(x)
        self._check_injection(inj)
        skips, h, temb = self.encode(x, t, context, inj)
        return self.decode(skips, h, temb, context, inj)


def unet_forward(model: MiniUNet, x_t, t, text, inj: InjectionSet | None = None):
    """Noise prediction for ``x_t``; ``text`` is a [B, L, D] context tensor."""
    return model(x_t, t, text, inj)
