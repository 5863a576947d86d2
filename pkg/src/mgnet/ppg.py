"""Prediction-guided refinement head.

One shared function ``F(x, M)`` is applied ``t_refine`` times; ``x`` (the
32-channel decoder feature) stays fixed while the logits map is updated.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

FEATURE_CHANNELS = 32
ASPP_RATES = (6, 12, 18)
ASPP_OUT = 128


class ASPP(nn.Module):
    def __init__(self, in_channels: int = FEATURE_CHANNELS, branch_channels: int = FEATURE_CHANNELS,
                 out_channels: int = ASPP_OUT, rates=ASPP_RATES):
        super().__init__()
        self.atrous = nn.ModuleList(
            nn.Conv2d(in_channels, branch_channels, 3, padding=r, dilation=r) for r in rates
        )
        self.image_pool = nn.Conv2d(in_channels, branch_channels, 1)
        self.project = nn.Conv2d(branch_channels * (len(rates) + 1), out_channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h < 1 or w < 1:
            raise ValueError("ASPP input must be at least 1x1")
        feats = [F.relu(conv(x)) for conv in self.atrous]
        pooled = F.relu(self.image_pool(F.adaptive_avg_pool2d(x, 1)))
        feats.append(F.interpolate(pooled, size=(h, w), mode="bilinear", align_corners=False))
        return F.relu(self.project(torch.cat(feats, dim=1)))


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, mid_channels: int, out_channels: int = FEATURE_CHANNELS):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, mid_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(mid_channels, out_channels, 3, padding=1)

    def forward(self, inp, skip):
        return skip + F.relu(self.conv2(F.relu(self.conv1(inp))))


class Refiner(nn.Module):
    def __init__(self, channels: int = FEATURE_CHANNELS):
        super().__init__()
        self.channels = channels
        self.block1 = ResidualBlock(channels + 1, channels + 1, channels)
        self.block2 = ResidualBlock(channels, channels, channels)
        self.block3 = ResidualBlock(channels, channels, channels)
        self.aspp = ASPP(channels, channels, ASPP_OUT)
        self.head1 = nn.Conv2d(ASPP_OUT, channels, 1)
        self.head2 = nn.Conv2d(channels, 1, 1)

    def step(self, x, m_prev):
        if x.shape[1] != self.channels:
            raise ValueError(f"refiner expects {self.channels}-channel features, got {x.shape[1]}")
        if m_prev.shape[1] != 1 or m_prev.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"logits map {tuple(m_prev.shape)} does not match feature {tuple(x.shape)}"
            )
        k1 = self.block1(torch.cat([x, m_prev], dim=1), x)
        k2 = self.block2(k1, k1)
        k3 = self.block3(k2, k2)
        return self.head2(self.head1(self.aspp(k3)))

    def forward(self, x, m0, t_refine: int = 2):
        return refine(self, x, m0, t_refine)


def refine_step(refiner: Refiner, x, m_prev):
    return refiner.step(x, m_prev)


def refine(refiner: Refiner, x, m0, t_refine: int = 2):
    """Return ``(M_T, trace)`` with ``trace = [M_0, ..., M_T]``."""
    if t_refine < 0:
        raise ValueError("t_refine must be >= 0")
    trace = [m0]
    m = m0
    for _ in range(t_refine):
        m = refiner.step(x, m)
        trace.append(m)
    return m, trace
