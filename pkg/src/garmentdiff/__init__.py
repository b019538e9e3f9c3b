"""Garment-centric latent diffusion at desk scale: garment encoder, try-on ControlNet, data engine, metrics."""

from .codec import BlockCodec
from .diffusion import NoiseSchedule, add_noise, ddim_step, ddim_timesteps, make_schedule, simple_loss
from .models import ModelBundle, build_bundle
from .pipelines import GarmentPipeline, GenerationRequest, TryOnRequest, resolve_task
from .unet import MiniUNet, UNetConfig, unet_forward

__version__ = "0.1.0"

__all__ = [
    "BlockCodec", "GarmentPipeline", "GenerationRequest", "MiniUNet", "ModelBundle", "NoiseSchedule",
    "TryOnRequest", "UNetConfig", "add_noise", "build_bundle", "ddim_step", "ddim_timesteps", "make_schedule",
    "resolve_task", "simple_loss", "unet_forward",
]
