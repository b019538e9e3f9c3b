"""Base pretraining and the two garment training stages.

Stage 0 fits the denoiser itself (desk-scale stand-in for a pretrained base
model).  Stage 1 trains only the garment encoder against the frozen
denoiser; stage 2 freezes both and trains only the try-on ControlNet.  All
three share one noise-prediction objective.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .controlnet import pack_condition
from .data import DatasetRecord, STAGE_AUGMENTATIONS, augment, collate
from .diffusion import add_noise, simple_loss
from .models import ModelBundle
from .unet import InjectionSet

log = logging.getLogger(__name__)

TRAINABLE = {0: "denoiser", 1: "garment_encoder", 2: "controlnet"}


@dataclass
class TrainingConfig:
    stage: int = 1
    learning_rate: float = 1e-2
    batch_size: int = 4
    max_steps: int = 100
    augmentations: Optional[frozenset] = None
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    lr_schedule: str = "constant"  # constant | cosine
    prompt_dropout: float = 0.1
    attention_mode: str = "asa"
    garment_timestep: str = "matched"  # matched | zero
    pose_kind: str = "dense_coords"
    log_every: int = 1

    def __post_init__(self):
        if self.stage not in TRAINABLE:
            raise ValueError(f"stage must be one of {sorted(TRAINABLE)}")
        if self.augmentations is None:
            self.augmentations = frozenset(STAGE_AUGMENTATIONS[self.stage])
        self.augmentations = frozenset(self.augmentations)
        if not self.augmentations <= STAGE_AUGMENTATIONS[self.stage]:
            raise ValueError(f"augmentations {sorted(self.augmentations)} not allowed in stage {self.stage}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


def set_trainable(bundle: ModelBundle, stage: int) -> list[torch.nn.Parameter]:
    """Freeze everything except the stage's own network; return its parameters."""
    owner = TRAINABLE[stage]
    mods = bundle.modules()
    if owner not in mods:
        raise ValueError(f"stage {stage} needs a {owner}")
    if stage == 2 and "garment_encoder" not in mods:
        raise ValueError("stage 2 requires a stage-1 garment encoder")
    for name, mod in mods.items():
        mod.requires_grad_(name == owner)
    return list(mods[owner].parameters())


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    z0: torch.Tensor
    garment_latent: torch.Tensor
    target_ctx: torch.Tensor
    garment_ctx: torch.Tensor
    cond: Optional[torch.Tensor] = None
    garment_prompts: list = field(default_factory=list)
    target_prompts: list = field(default_factory=list)

    def permute(self, idx) -> "Batch":
        return Batch(
            self.z0[idx], self.garment_latent[idx], self.target_ctx[idx], self.garment_ctx[idx],
            None if self.cond is None else self.cond[idx],
            [self.garment_prompts[i] for i in idx], [self.target_prompts[i] for i in idx],
        )


def make_batch(records: Sequence[DatasetRecord], bundle: ModelBundle, stage: int,
               pose_kind: str = "dense_coords", drop_mask: Optional[Sequence[bool]] = None) -> Batch:
    dt = bundle.dtype
    col = collate(list(records), pose_kind)
    targets = list(col["target_prompts"])
    if drop_mask is not None:
        targets = ["" if d else p for p, d in zip(targets, drop_mask)]
    person = torch.as_tensor(col["person"], dtype=dt)
    garment = torch.as_tensor(col["garment"], dtype=dt)
    cond = None
    if stage == 2:
        conds = [pack_condition(r.person_image, r.agnostic_mask, p) for r, p in zip(records, col["pose"])]
        cond = bundle.controlnet.condition_tensor(conds, person)
    return Batch(
        z0=bundle.codec.encode(person),
        garment_latent=bundle.codec.encode(garment),
        target_ctx=bundle.text.embed_batch(targets, dt),
        garment_ctx=bundle.text.embed_batch(col["garment_prompts"], dt),
        cond=cond,
        garment_prompts=list(col["garment_prompts"]),
        target_prompts=targets,
    )


# ---------------------------------------------------------------------------
# objective


def predict_noise(bundle: ModelBundle, batch: Batch, z_t: torch.Tensor, t: torch.Tensor, stage: int,
                  attention_mode: str = "asa", garment_timestep: str = "matched") -> torch.Tensor:
    inj = InjectionSet()
    if stage >= 1:
        gt = t if garment_timestep == "matched" else torch.zeros_like(t)
        inj.garment_kv = bundle.garment_encoder(batch.garment_latent, gt, batch.garment_ctx)
        inj.attention_mode = attention_mode
    if stage == 2:
        inj.control_residuals = bundle.controlnet(z_t, t, batch.target_ctx, batch.cond)
    return bundle.denoiser(z_t, t, batch.target_ctx, inj)


def stage_loss(bundle: ModelBundle, batch: Batch, t: torch.Tensor, eps: torch.Tensor, stage: int,
               attention_mode: str = "asa", garment_timestep: str = "matched",
               predictor: Callable | None = None) -> torch.Tensor:
    z_t = add_noise(batch.z0, eps, t, bundle.schedule)
    if predictor is None:
        eps_pred = predict_noise(bundle, batch, z_t, t, stage, attention_mode, garment_timestep)
    else:
        eps_pred = predictor(bundle, batch, z_t, t, stage)
    return simple_loss(eps_pred, eps)


def sample_noise(batch: Batch, T: int, gen: torch.Generator):
    n = batch.z0.shape[0]
    t = torch.randint(0, T, (n,), generator=gen)
    eps = torch.randn(batch.z0.shape, generator=gen, dtype=torch.float64).to(batch.z0.dtype)
    return t, eps


def make_optimizer(params, cfg: TrainingConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def train_step(bundle: ModelBundle, batch: Batch, optimizer: torch.optim.Optimizer, stage: int,
               gen: torch.Generator, attention_mode: str = "asa", garment_timestep: str = "matched",
               t: torch.Tensor | None = None, eps: torch.Tensor | None = None):
    """One optimisation step; returns (loss, grad-norm of the trainable group, optimizer)."""
    if t is None or eps is None:
        t, eps = sample_noise(batch, bundle.schedule.T, gen)
    optimizer.zero_grad(set_to_none=True)
    loss = stage_loss(bundle, batch, t, eps, stage, attention_mode, garment_timestep)
    loss.backward()
    owner = bundle.modules()[TRAINABLE[stage]]
    grads = [p.grad for p in owner.parameters() if p.grad is not None]
    gnorm = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads))) if grads else 0.0
    optimizer.step()
    return float(loss.detach()), gnorm, optimizer


def stage1_step(bundle, batch, optimizer, gen, **kw):
    return train_step(bundle, batch, optimizer, 1, gen, **kw)


def stage2_step(bundle, batch, optimizer, gen, **kw):
    return train_step(bundle, batch, optimizer, 2, gen, **kw)


# ---------------------------------------------------------------------------
# loop


class JsonLineLogger:
    def __init__(self, stream=None):
        self.stream = stream if stream is not None else sys.stderr

    def __call__(self, **fields):
        self.stream.write(json.dumps(fields, sort_keys=True) + "\n")
        self.stream.flush()


def train(bundle: ModelBundle, records: Sequence[DatasetRecord], cfg: TrainingConfig,
          logger: Callable | None = None) -> list[float]:
    """Run ``cfg.max_steps`` steps of the configured stage; returns per-step losses."""
    if cfg.stage >= 1 and bundle.garment_encoder is None:
        bundle.add_garment_encoder()
    if cfg.stage == 2 and bundle.controlnet is None:
        bundle.add_controlnet()
    params = set_trainable(bundle, cfg.stage)
    for mod in bundle.modules().values():
        mod.train()
    opt = make_optimizer(params, cfg)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.max_steps) if cfg.lr_schedule == "cosine" else None
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    losses = []
    t0 = time.perf_counter()
    n = len(records)
    for step in range(1, cfg.max_steps + 1):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        recs = [augment(records[i], rng, cfg.stage, cfg.augmentations) if cfg.augmentations else records[i]
                for i in idx]
        drop = rng.random(len(recs)) < cfg.prompt_dropout
        batch = make_batch(recs, bundle, cfg.stage, cfg.pose_kind, drop)
        loss, gnorm, opt = train_step(bundle, batch, opt, cfg.stage, gen, cfg.attention_mode,
                                      cfg.garment_timestep)
        if sched is not None:
            sched.step()
        losses.append(loss)
        if logger is not None and step % cfg.log_every == 0:
            logger(step=step, stage=cfg.stage, loss=loss,
                   grad_norm={TRAINABLE[cfg.stage]: gnorm}, elapsed=round(time.perf_counter() - t0, 3))
    bundle.eval()
    for mod in bundle.modules().values():
        mod.requires_grad_(False)
    return losses


def moving_average(values: Sequence[float], window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()])
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def parameter_checksum(module: torch.nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
