"""Noise schedule, forward noising, deterministic DDIM updates and the noise loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule.  ``alphas_cumprod[t]`` is the signal fraction at step t."""

    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas_cumprod: np.ndarray

    def alpha_bar(self, t: int) -> float:
        # t == -1 stands for the clean sample (alpha_bar = 1)
        if t == -1:
            return 1.0
        if not 0 <= t < self.T:
            raise ParameterError(f"timestep {t} outside [0, {self.T})")
        return float(self.alphas_cumprod[t])

    def alpha_bar_tensor(self, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        table = torch.as_tensor(self.alphas_cumprod, dtype=like.dtype, device=like.device)
        return table[t.long()]


def make_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 2:
        raise ParameterError("T must be >= 2")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    return NoiseSchedule(T, float(beta_start), float(beta_end), betas, alphas_cumprod)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t, s: NoiseSchedule) -> torch.Tensor:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    ``t`` is an int, or an integer tensor with one entry per batch element.
    """
    _check_same_shape(x0, eps)
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        if t.min() < 0 or t.max() >= s.T:
            raise ParameterError("timestep out of range")
        ab = s.alpha_bar_tensor(t, x0).view(-1, *([1] * (x0.ndim - 1)))
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    ab = s.alpha_bar(int(t))
    if int(t) == -1:
        return x0.clone()
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_step(
    x_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    s: NoiseSchedule,
    eta: float = 0.0,
    clip: float | None = None,
) -> torch.Tensor:
    """One deterministic DDIM update from ``t`` to ``t_prev`` (``t_prev=-1`` lands on x0).

    ``clip`` optionally clamps the predicted x0 to ``[-clip, clip]`` before
    re-noising; the noise estimate is then recomputed from the clamped x0.
    """
    _check_same_shape(x_t, eps_pred)
    if t_prev >= t:
        raise ParameterError(f"t_prev ({t_prev}) must be < t ({t})")
    if eta != 0.0:
        raise ParameterError("only the deterministic sampler (eta=0) is supported")
    ab_t = s.alpha_bar(t)
    ab_prev = s.alpha_bar(t_prev)
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_pred) / np.sqrt(ab_t)
    if clip is not None:
        x0_hat = x0_hat.clamp(-clip, clip)
        eps_pred = (x_t - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_pred


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Trailing spacing: the first step always starts from t = T-1."""
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    steps = min(steps, T)
    ts = np.round(T - np.arange(steps) * (T / steps)).astype(np.int64) - 1
    return [int(v) for v in ts]


def simple_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    _check_same_shape(eps_pred, eps)
    return ((eps - eps_pred) ** 2).mean()
