"""Try-on ControlNet: packed (mask, masked image, pose) condition -> zero-initialised residuals.

Condition channel order is fixed: ``[mask, masked_image..., pose...]``.  The
pose block is always ``pose_channels`` wide; narrower pose kinds are
zero-padded, so one network accepts every kind.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .unet import ControlResiduals, InjectionSet, MiniUNet, UNetConfig

POSE_KINDS = {"none": 0, "keypoint_render": 1, "dense_coords": 2}


class ConditionError(ValueError):
    pass


@dataclass
class PoseMap:
    data: np.ndarray  # [pose_channels, H, W]
    kind: str

    def __post_init__(self):
        if self.kind not in POSE_KINDS:
            raise ConditionError(f"unknown pose kind {self.kind!r}")
        want = POSE_KINDS[self.kind]
        if self.data.ndim != 3 or self.data.shape[0] != want:
            raise ConditionError(f"{self.kind} pose needs {want} channels, got shape {self.data.shape}")
        if self.kind == "dense_coords" and (self.data.min() < 0 or self.data.max() > 1):
            raise ConditionError("dense coordinates must lie in [0, 1]")

    @classmethod
    def empty(cls, h: int, w: int) -> "PoseMap":
        return cls(np.zeros((0, h, w)), "none")


@dataclass
class TryOnCondition:
    mask: np.ndarray  # [1, H, W] in {0, 1}; 1 = region to generate
    masked_image: np.ndarray  # [C, H, W]
    pose: PoseMap

    def packed(self, pose_slot: int | None = None) -> np.ndarray:
        pose = self.pose.data
        if pose_slot is not None:
            if pose.shape[0] > pose_slot:
                raise ConditionError(f"pose has {pose.shape[0]} channels, slot holds {pose_slot}")
            pad = np.zeros((pose_slot - pose.shape[0], *pose.shape[1:]))
            pose = np.concatenate([pose, pad], axis=0)
        return np.concatenate([self.mask, self.masked_image, pose], axis=0)


def pack_condition(image_context: np.ndarray, mask: np.ndarray, pose: PoseMap, invert: bool = False) -> TryOnCondition:
    """Build the try-on condition.

    ``mask == 1`` marks the area to inpaint and the masked image keeps the
    complement, ``I * (1 - m)``.  ``invert=True`` keeps ``I * m`` instead.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2:
        mask = mask[None]
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ConditionError("mask must be binary")
    if image_context.shape[-2:] != mask.shape[-2:] or pose.data.shape[-2:] != mask.shape[-2:]:
        raise ConditionError("spatial dims of image, mask and pose differ")
    keep = mask if invert else 1.0 - mask
    return TryOnCondition(mask, image_context * keep, pose)


class TryOnControlNet(nn.Module):
    """Encoder half + middle block of the denoiser with a widened input layer."""

    def __init__(self, config: UNetConfig, image_channels: int = 3, pose_channels: int = 2, factor: int = 4):
        super().__init__()
        self.config = config
        self.pose_channels = pose_channels
        self.cond_channels = 1 + image_channels + pose_channels
        self.factor = factor
        self.net = MiniUNet(config, extra_in_channels=self.cond_channels, encoder_only=True)
        self.zero_convs = nn.ModuleDict()
        for name in config.skip_sites:
            ch = config.level_channels(config.depth - 1) if name == "mid" else config.level_channels(int(name[4:]))
            conv = nn.Conv2d(ch, ch, 1)
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.zero_convs[name] = conv

    @classmethod
    def from_denoiser(cls, denoiser: MiniUNet, image_channels: int = 3, pose_channels: int = 2, factor: int = 4):
        cn = cls(denoiser.config, image_channels, pose_channels, factor).to(next(denoiser.parameters()).dtype)
        state = copy.deepcopy(denoiser.state_dict())
        w = state["conv_in.weight"]
        wide = torch.zeros(w.shape[0], w.shape[1] + cn.cond_channels, *w.shape[2:], dtype=w.dtype)
        wide[:, : w.shape[1]] = w
        state["conv_in.weight"] = wide
        own = cn.net.state_dict()
        cn.net.load_state_dict({k: v for k, v in state.items() if k in own}, strict=True)
        return cn

    def condition_tensor(self, conds: list[TryOnCondition], like: torch.Tensor) -> torch.Tensor:
        arr = np.stack([c.packed(self.pose_channels) for c in conds])
        x = torch.as_tensor(arr, dtype=like.dtype)
        return torch.nn.functional.avg_pool2d(x, self.factor)

    def forward(self, x_t, t, context, cond: torch.Tensor) -> ControlResiduals:
        """``cond`` is the packed condition already at latent resolution, [B, cond_channels, h, w]."""
        if cond.shape[0] != x_t.shape[0] or cond.shape[-2:] != x_t.shape[-2:]:
            raise ConditionError(f"condition shape {tuple(cond.shape)} does not match latent {tuple(x_t.shape)}")
        if cond.shape[1] != self.cond_channels:
            raise ConditionError(f"expected {self.cond_channels} condition channels, got {cond.shape[1]}")
        skips, mid, _ = self.net.encode(torch.cat([x_t, cond], dim=1), t, context, InjectionSet())
        feats = dict(skips, mid=mid)
        return ControlResiduals({name: conv(feats[name]) for name, conv in self.zero_convs.items()})


def controlnet_forward(cn: TryOnControlNet, x_t, t, text, conds: list[TryOnCondition]) -> ControlResiduals:
    return cn(x_t, t, text, cn.condition_tensor(conds, x_t))
