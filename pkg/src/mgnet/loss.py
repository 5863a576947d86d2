"""BCE plus uncertainty-aware loss with a cosine-ramped weight."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

EPS = 1e-7
UAL_WEIGHT = 1.5


@dataclass
class LossConfig:
    ual_base_weight: float = UAL_WEIGHT
    lambda_schedule: str = "cosine_increase"
    total_steps: int = 1
    use_ual: bool = True

    def __post_init__(self):
        if self.lambda_schedule not in ("cosine_increase", "constant"):
            raise ValueError(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")


def _check(p, g):
    if p.shape != g.shape:
        raise ValueError(f"prediction {tuple(p.shape)} and target {tuple(g.shape)} differ in shape")


def bce(p: torch.Tensor, g: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    _check(p, g)
    p = p.clamp(eps, 1 - eps)
    g = g.to(p.dtype)
    return (-(g * torch.log(p)) - (1 - g) * torch.log(1 - p)).mean()


def ual(p: torch.Tensor) -> torch.Tensor:
    return (1 - (2 * p - 1).abs().pow(2)).mean()


def lambda_at(step: int, total_steps: int, schedule: str = "cosine_increase") -> float:
    if schedule == "constant":
        return 1.0
    step = min(max(step, 0), total_steps)
    lam = 0.5 * (1 - math.cos(math.pi * step / total_steps))
    return min(1.0, max(0.0, lam))


def total_loss(p, g, step: int, cfg: LossConfig, return_parts: bool = False):
    l_bce = bce(p, g)
    lam = lambda_at(step, cfg.total_steps, cfg.lambda_schedule) if cfg.use_ual else 0.0
    if cfg.use_ual:
        l_ual = ual(p)
        loss = l_bce + cfg.ual_base_weight * lam * l_ual
    else:
        l_ual = None
        loss = l_bce
    if return_parts:
        return loss, {"bce": l_bce, "ual": l_ual, "lambda": lam}
    return loss
