"""Model-agnostic denoising-diffusion machinery.

Schedules, the forward process, the noise-prediction objective, and the
deterministic DDIM sampler with its reverse-time inversion. Operates on
standardized feature tensors; models plug in through the NoisePredictor
protocol (a callable taking (x_t, t, condition)).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

NoisePredictor = Callable[[torch.Tensor, int, object], torch.Tensor]


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear-beta schedule; alpha_bars[t] indexes steps t = 0..T-1."""

    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def validate(self) -> None:
        b = self.betas
        if not (np.all(b > 0) and np.all(b < 1) and np.all(np.diff(b) >= 0)):
            raise ValueError("betas must be in (0, 1) and non-decreasing")
        if not np.all(np.diff(self.alpha_bars) < 0):
            raise ValueError("alpha_bars must be strictly decreasing")


def schedule_new(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, T)
    alpha_bars = np.cumprod(1.0 - betas)
    sched = DiffusionSchedule(betas=betas, alpha_bars=alpha_bars)
    sched.validate()
    return sched


def forward_diffuse(x0: torch.Tensor, t, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.

    t may be a scalar step index or a per-item LongTensor for batched x0.
    """
    abar = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)
    if isinstance(t, int):
        if not 0 <= t < schedule.T:
            raise ValueError(f"t={t} out of range [0, {schedule.T})")
        a = abar[t]
    else:
        t = torch.as_tensor(t, dtype=torch.long, device=x0.device)
        if torch.any(t < 0) or torch.any(t >= schedule.T):
            raise ValueError("t out of range")
        a = abar[t].reshape(-1, *([1] * (x0.dim() - 1)))
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps


def eps_loss(
    predictor: NoisePredictor,
    x0: torch.Tensor,
    condition,
    rng: torch.Generator,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """Mean-squared error between predicted and injected noise.

    Draws one t ~ U[0, T) per batch item and eps ~ N(0, I); x0 is (B, ...) in
    standardized feature space.
    """
    B = x0.shape[0]
    t = torch.randint(0, schedule.T, (B,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    x_t = forward_diffuse(x0, t, eps, schedule)
    pred = predictor(x_t, t, condition)
    return torch.mean((pred - eps) ** 2)


def ddim_timesteps(schedule: DiffusionSchedule, steps: int) -> np.ndarray:
    """Uniform-stride descending sub-schedule of `steps` step indices."""
    if steps < 1 or steps > schedule.T:
        raise ValueError(f"steps must be in [1, {schedule.T}]")
    return np.unique(np.round(np.linspace(schedule.T - 1, 0, steps)).astype(int))[::-1].copy()


@torch.no_grad()
def ddim_sample(
    predictor: NoisePredictor,
    condition,
    shape: tuple,
    schedule: DiffusionSchedule,
    steps: int = 50,
    rng: Optional[torch.Generator] = None,
    rng_seed: Optional[int] = None,
    x_T: Optional[torch.Tensor] = None,
    clip_x0: Optional[float] = None,
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM sampling from seeded standard-normal x_T.

    Consumes exactly `steps` predictor calls; bit-identical per (weights,
    condition, seed). clip_x0 bounds the per-step clean estimate (standard
    sampler stabilization: near-terminal steps divide by sqrt(abar) ~ 1e-2,
    so unclipped prediction error can run the trajectory off the data range).
    """
    ts = ddim_timesteps(schedule, steps)
    if x_T is None:
        if rng is None:
            rng = torch.Generator()
            rng.manual_seed(0 if rng_seed is None else int(rng_seed))
        x = torch.randn(shape, generator=rng, dtype=torch.float32)
    else:
        x = x_T.clone()
    abar = schedule.alpha_bars
    for i, t in enumerate(ts):
        eps = predictor(x, int(t), condition)
        a_t = float(abar[t])
        x0_hat = (x - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        if clip_x0 is not None:
            x0_hat = torch.clamp(x0_hat, -clip_x0, clip_x0)
        if i + 1 == len(ts):
            x = x0_hat
        else:
            a_next = float(abar[ts[i + 1]])
            x = np.sqrt(a_next) * x0_hat + np.sqrt(1.0 - a_next) * eps
    return x


@torch.no_grad()
def ddim_invert(
    predictor: NoisePredictor,
    condition,
    x0: torch.Tensor,
    schedule: DiffusionSchedule,
    steps: int = 50,
) -> torch.Tensor:
    """Reverse-time DDIM: map data to the latent x_T along the same sub-schedule.

    Each transition evaluates the predictor at the destination (noisier) step;
    ddim_sample(ddim_invert(x0)) reconstructs x0 approximately (exactly for a
    linear predictor such as the zero function).
    """
    ts = ddim_timesteps(schedule, steps)[::-1]  # ascending
    abar = schedule.alpha_bars
    x = x0.clone()
    a_cur = 1.0  # clean data sits at abar = 1
    for t in ts:
        a_next = float(abar[t])
        eps = predictor(x, int(t), condition)
        x0_hat = (x - np.sqrt(1.0 - a_cur) * eps) / np.sqrt(a_cur)
        x = np.sqrt(a_next) * x0_hat + np.sqrt(1.0 - a_next) * eps
        a_cur = a_next
    return x


def renoise(x_low: torch.Tensor, a_low: float, a_high: float, rng: torch.Generator) -> torch.Tensor:
    """One RePaint re-noising jump from a cleaner level to a noisier one.

    Marginals stay correct: var(sqrt(a_high/a_low)) * (1-a_low) + (1 - a_high/a_low) = 1 - a_high.
    """
    ratio = a_high / a_low
    noise = torch.randn(x_low.shape, generator=rng, dtype=x_low.dtype)
    return np.sqrt(ratio) * x_low + np.sqrt(max(1.0 - ratio, 0.0)) * noise
