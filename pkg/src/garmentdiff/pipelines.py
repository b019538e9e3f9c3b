"""Garment-centric text-to-image and inpainting try-on sampling."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .controlnet import PoseMap, pack_condition
from .diffusion import add_noise, ddim_step, ddim_timesteps
from .models import ModelBundle
from .unet import GarmentKV, InjectionSet


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# task registry


@dataclass(frozen=True)
class TaskConfig:
    task: str
    pipeline: str  # text2image | inpainting
    use_garment_encoder: bool
    base_model_id: str
    controlnet: str  # none | any | tryon
    published_base_model: str
    published_controlnet: str


TASKS = {
    "gc_t2i": TaskConfig("gc_t2i", "text2image", True, "sd-mini", "none",
                         "stable diffusion v1.5", "×"),
    "stylized_gc_t2i": TaskConfig("stylized_gc_t2i", "text2image", True, "stylized", "none",
                                  "stylized base-model", "×"),
    "controllable_gc_t2i": TaskConfig("controllable_gc_t2i", "text2image", True, "any", "any",
                                      "any base-model", "any ContorlNet"),
    "virtual_tryon": TaskConfig("virtual_tryon", "inpainting", True, "sd-mini", "tryon",
                                "stable diffusion v1.5", "try-on ControlNet"),
}
_ALIASES = {"virtual_try_on": "virtual_tryon", "tryon": "virtual_tryon", "try_on": "virtual_tryon"}


def resolve_task(name: str) -> TaskConfig:
    key = re.sub(r"[\s\-]+", "_", name.strip().lower())
    key = _ALIASES.get(key, key)
    try:
        return TASKS[key]
    except KeyError:
        raise PipelineError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


# ---------------------------------------------------------------------------
# per-step arithmetic


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, s: float) -> torch.Tensor:
    if eps_uncond.shape != eps_cond.shape:
        raise PipelineError("guidance inputs differ in shape")
    return eps_uncond + s * (eps_cond - eps_uncond)


def blend_latents(z_gen: torch.Tensor, z_src_noised: torch.Tensor, m_latent: torch.Tensor) -> torch.Tensor:
    """Keep generated latents where m = 1, (noised) source latents where m = 0."""
    if z_gen.shape != z_src_noised.shape:
        raise PipelineError("latent shapes differ")
    return m_latent * z_gen + (1.0 - m_latent) * z_src_noised


# ---------------------------------------------------------------------------
# requests


@dataclass(kw_only=True)
class GenerationRequest:
    garment_image: Optional[np.ndarray]  # [3, H, W] in [0, 1]
    garment_prompt: str = ""
    target_prompt: str = ""
    seed: int = 0
    steps: int = 25
    guidance_scale: float = 3.0
    attention_mode: str = "asa"
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if self.steps < 1:
            raise PipelineError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise PipelineError("guidance_scale must be >= 0")


@dataclass(kw_only=True)
class TryOnRequest(GenerationRequest):
    source_image: np.ndarray
    mask: np.ndarray  # [1, H, W] or [H, W], 1 = regenerate
    pose: PoseMap = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        self.mask = np.asarray(self.mask, dtype=np.float64).reshape(1, *self.source_image.shape[-2:])
        if self.pose is None:
            self.pose = PoseMap.empty(*self.source_image.shape[-2:])
        if self.pose.data.shape[-2:] != self.source_image.shape[-2:]:
            raise PipelineError("pose and source image sizes differ")
        self.height, self.width = self.source_image.shape[-2:]


@dataclass
class SampleResult:
    image: np.ndarray  # [3, H, W]
    latent: torch.Tensor  # [1, C, h, w]


# ---------------------------------------------------------------------------
# pipeline


class GarmentPipeline:
    """Sampling front-end over a :class:`ModelBundle`.

    ``drop_garment_uncond`` removes garment K/V from the unconditional
    guidance pass (by default only the text is dropped).  ``garment_t0``
    computes garment K/V once at t=0 and reuses it for every step.
    ``clip_sample`` clamps each predicted x0 to the latent range (None disables).
    """

    def __init__(self, bundle: ModelBundle, drop_garment_uncond: bool = False, garment_t0: bool = False,
                 paste_back: bool = True, clip_sample: float | None = 1.0):
        self.bundle = bundle
        self.clip_sample = clip_sample
        self.drop_garment_uncond = drop_garment_uncond
        self.garment_t0 = garment_t0
        self.paste_back = paste_back

    def _tensor(self, arr) -> torch.Tensor:
        return torch.as_tensor(np.asarray(arr), dtype=self.bundle.dtype)

    def initial_noise(self, req: GenerationRequest) -> torch.Tensor:
        f = self.bundle.codec.factor
        shape = (1, self.bundle.codec.channels, req.height // f, req.width // f)
        gen = torch.Generator().manual_seed(int(req.seed))
        return torch.randn(shape, generator=gen, dtype=torch.float64).to(self.bundle.dtype)

    def _garment_fn(self, req: GenerationRequest, kv_transform):
        b = self.bundle
        if req.attention_mode == "none":
            return lambda t: None
        if b.garment_encoder is None:
            raise PipelineError("garment encoder not loaded")
        if req.garment_image is None:
            raise PipelineError("request has no garment image")
        g_lat = b.codec.encode(self._tensor(req.garment_image)[None])
        g_ctx = b.text.embed(req.garment_prompt, b.dtype).vectors[None]
        cache: dict = {}

        def at(t: int) -> GarmentKV:
            key = 0 if self.garment_t0 else t
            if key not in cache:
                kv = b.garment_encoder(g_lat, key, g_ctx)
                cache.clear()
                cache[key] = kv_transform(kv) if kv_transform is not None else kv
            return cache[key]

        return at

    @torch.no_grad()
    def _sample(self, req, noise, cond=None, src_latent=None, m_latent=None, kv_transform=None,
                control_scale: float = 1.0) -> torch.Tensor:
        b = self.bundle
        garment_at = self._garment_fn(req, kv_transform)
        ctx_c = b.text.embed(req.target_prompt, b.dtype).vectors[None]
        ctx_u = b.text.embed("", b.dtype).vectors[None]
        guided = req.guidance_scale != 1.0
        z = noise
        ts = ddim_timesteps(b.schedule.T, req.steps)
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else -1
            kv = garment_at(t)
            eps_c = self._predict(z, t, ctx_c, kv, req.attention_mode, cond, control_scale)
            if guided:
                kv_u = None if self.drop_garment_uncond else kv
                eps_u = self._predict(z, t, ctx_u, kv_u, req.attention_mode, cond, control_scale)
                eps = cfg_combine(eps_u, eps_c, req.guidance_scale)
            else:
                eps = eps_c
            z = ddim_step(z, eps, t, t_prev, b.schedule, clip=self.clip_sample)
            if src_latent is not None:
                z = blend_latents(z, add_noise(src_latent, noise, t_prev, b.schedule), m_latent)
        return z

    def _predict(self, z, t, ctx, kv, mode, cond, control_scale):
        b = self.bundle
        mode = mode if kv is not None else "none"
        inj = InjectionSet(garment_kv=kv, attention_mode=mode)
        if cond is not None:
            res = b.controlnet(z, t, ctx, cond)
            inj.control_residuals = res if control_scale == 1.0 else res.scaled(control_scale)
        return b.denoiser(z, t, ctx, inj)

    def generate_gc_t2i(self, req: GenerationRequest, noise: torch.Tensor | None = None,
                        kv_transform: Callable[[GarmentKV], GarmentKV] | None = None) -> SampleResult:
        if noise is None:
            noise = self.initial_noise(req)
        z = self._sample(req, noise, kv_transform=kv_transform)
        img = self.bundle.codec.decode(z)[0]
        return SampleResult(img.double().numpy(), z)

    def tryon(self, req: TryOnRequest, noise: torch.Tensor | None = None,
              kv_transform: Callable[[GarmentKV], GarmentKV] | None = None,
              use_controlnet: bool = True, control_scale: float = 1.0) -> SampleResult:
        b = self.bundle
        if use_controlnet and b.controlnet is None:
            raise PipelineError("try-on ControlNet not loaded")
        src = self._tensor(req.source_image)[None]
        if src.shape[-2:] != (req.height, req.width):
            raise PipelineError("source image size mismatch")
        if noise is None:
            noise = self.initial_noise(req)
        mask = self._tensor(req.mask)[None]
        src_latent = b.codec.encode(src)
        m_latent = b.codec.downsample_mask(mask)
        cond = None
        if use_controlnet:
            tc = pack_condition(req.source_image, req.mask, req.pose)
            cond = b.controlnet.condition_tensor([tc], noise)
        z = self._sample(req, noise, cond, src_latent, m_latent, kv_transform, control_scale)
        out = b.codec.decode(z)
        if self.paste_back:
            out = mask * out + (1.0 - mask) * b.codec.decode(src_latent)
        return SampleResult(out[0].double().numpy(), z)
