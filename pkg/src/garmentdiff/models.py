"""The set of networks one try-on system needs, plus construction from config."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch

from .codec import BlockCodec
from .controlnet import TryOnControlNet
from .diffusion import NoiseSchedule, make_schedule
from .garment_encoder import GarmentEncoder
from .text import HashedTextEmbedder
from .unet import MiniUNet, UNetConfig

PREFIXES = ("denoiser", "garment_encoder", "controlnet")


@dataclass
class ModelBundle:
    denoiser: MiniUNet
    codec: BlockCodec
    text: HashedTextEmbedder
    schedule: NoiseSchedule
    garment_encoder: Optional[GarmentEncoder] = None
    controlnet: Optional[TryOnControlNet] = None
    name: str = "sd-mini"
    pose_channels: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.denoiser.parameters()).dtype

    def modules(self) -> dict[str, torch.nn.Module]:
        mods = {"denoiser": self.denoiser}
        if self.garment_encoder is not None:
            mods["garment_encoder"] = self.garment_encoder
        if self.controlnet is not None:
            mods["controlnet"] = self.controlnet
        return mods

    def named_parameters(self):
        for prefix, mod in self.modules().items():
            for name, p in mod.named_parameters():
                yield f"{prefix}.{name}", p

    def to(self, dtype) -> "ModelBundle":
        for mod in self.modules().values():
            mod.to(dtype)
        return self

    def eval(self) -> "ModelBundle":
        for mod in self.modules().values():
            mod.eval()
        return self

    def add_garment_encoder(self) -> GarmentEncoder:
        self.garment_encoder = GarmentEncoder.from_denoiser(self.denoiser)
        return self.garment_encoder

    def add_controlnet(self) -> TryOnControlNet:
        self.controlnet = TryOnControlNet.from_denoiser(
            self.denoiser, self.codec.channels, self.pose_channels, self.codec.factor
        )
        return self.controlnet


def build_bundle(
    unet: UNetConfig = UNetConfig(),
    T: int = 100,
    beta_start: float = 1e-3,
    beta_end: float = 0.1,
    codec_factor: int = 4,
    text_seed: int = 0,
    context_len: int = 8,
    init_seed: int = 0,
    with_garment_encoder: bool = False,
    with_controlnet: bool = False,
    dtype=torch.float32,
    name: str = "sd-mini",
) -> ModelBundle:
    torch.manual_seed(init_seed)
    denoiser = MiniUNet(unet).to(dtype)
    bundle = ModelBundle(
        denoiser=denoiser,
        codec=BlockCodec(codec_factor, unet.in_channels),
        text=HashedTextEmbedder(unet.embedding_dim, context_len, text_seed),
        schedule=make_schedule(T, beta_start, beta_end),
        name=name,
    )
    if with_garment_encoder:
        bundle.add_garment_encoder()
    if with_controlnet:
        bundle.add_controlnet()
    return bundle
