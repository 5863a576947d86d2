"""Fine-rescaling and merging: three input scales fused by per-pixel attention."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import conv_bn_relu

SCALES = (0.7, 1.0, 1.2)


def snap_size(n: int, k: float) -> int:
    # round half up, in units of the coarsest stride
    return int(math.floor(k * n / 32 + 0.5)) * 32


def make_scale_set(image: torch.Tensor, scales=SCALES) -> list[torch.Tensor]:
    """Resize a ``B x 3 x H x W`` batch to each scale, snapping sides to multiples of 32."""
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise ValueError(f"image sides must be multiples of 32, got {h}x{w}")
    out = []
    for k in scales:
        if k == 1.0:
            out.append(image)
            continue
        if k * h < 32 or k * w < 32:
            raise ValueError(f"scale {k} collapses {h}x{w} below 32 pixels")
        sh, sw = snap_size(h, k), snap_size(w, k)
        out.append(F.interpolate(image, size=(sh, sw), mode="bilinear", align_corners=False))
    return out


def mixed_pool(x: torch.Tensor, size) -> torch.Tensor:
    return F.adaptive_max_pool2d(x, size) + F.adaptive_avg_pool2d(x, size)


class BranchHigh(nn.Module):
    """1.2x branch: 3x3 and 5x5 CBR, then max+avg pooling down to the 1.0x size."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.Sequential(conv_bn_relu(channels, channels, 3), conv_bn_relu(channels, channels, 5))

    def forward(self, x, size):
        return mixed_pool(self.convs(x), size)


class BranchMid(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = conv_bn_relu(channels, channels, 3)

    def forward(self, x):
        return self.conv(x)


class BranchLow(nn.Module):
    """0.7x branch: two 3x3 CBR then bilinear upsampling to the 1.0x size."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.Sequential(conv_bn_relu(channels, channels, 3), conv_bn_relu(channels, channels, 3))

    def forward(self, x, size):
        return F.interpolate(self.convs(x), size=size, mode="bilinear", align_corners=False)


class AttentionGenerator(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        c2, c4 = max(1, channels // 2), max(1, channels // 4)
        self.body = nn.Sequential(
            conv_bn_relu(3 * channels, channels, 3),
            conv_bn_relu(channels, c2, 3),
            conv_bn_relu(c2, c4, 3),
        )
        self.head = nn.Conv2d(c4, 3, 1)

    def forward(self, x):
        return self.head(self.body(x))


@dataclass
class ScaleTriplet:
    f07: torch.Tensor
    f10: torch.Tensor
    f12: torch.Tensor
    level_index: int = 1

    @property
    def target_size(self):
        return tuple(self.f10.shape[-2:])


def fuse(triplet: ScaleTriplet, generator, return_attention: bool = False):
    """Attention-weighted sum of three aligned branch outputs.

    The generator sees ``[f12, f10, f07]`` and its 3-channel output is
    softmaxed per pixel; channel order follows the concatenation order.
    """
    f12, f10, f07 = triplet.f12, triplet.f10, triplet.f07
    if not (f12.shape[1] == f10.shape[1] == f07.shape[1]):
        raise ValueError(
            f"branch channel mismatch: {f12.shape[1]}, {f10.shape[1]}, {f07.shape[1]}"
        )
    if not (f12.shape[-2:] == f10.shape[-2:] == f07.shape[-2:]):
        raise ValueError("branches are not spatially aligned")
    att = torch.softmax(generator(torch.cat([f12, f10, f07], dim=1)), dim=1)
    out = att[:, 0:1] * f12 + att[:, 1:2] * f10 + att[:, 2:3] * f07
    if return_attention:
        return out, att
    return out


class FRMLevel(nn.Module):
    def __init__(self, channels: int, multi_scale: bool = True):
        super().__init__()
        self.mid = BranchMid(channels)
        self.multi_scale = multi_scale
        if multi_scale:
            self.high = BranchHigh(channels)
            self.low = BranchLow(channels)
            self.generator = AttentionGenerator(channels)

    def align(self, f12, f10, f07) -> ScaleTriplet:
        size = tuple(f10.shape[-2:])
        return ScaleTriplet(f07=self.low(f07, size), f10=self.mid(f10), f12=self.high(f12, size))

    def forward(self, f12, f10, f07, return_attention: bool = False):
        return fuse(self.align(f12, f10, f07), self.generator, return_attention=return_attention)


class FRM(nn.Module):
    """Per-level fusion over the five pyramid levels.

    With ``multi_scale=False`` each level reduces to the 1.0x branch alone.
    """

    def __init__(self, level_channels, multi_scale: bool = True):
        super().__init__()
        self.multi_scale = multi_scale
        self.levels = nn.ModuleList(FRMLevel(c, multi_scale) for c in level_channels)

    def forward(self, p12, p10, p07, return_attention: bool = False):
        fused, atts = [], []
        for i, level in enumerate(self.levels):
            if self.multi_scale:
                f, a = level(p12[i], p10[i], p07[i], return_attention=True)
                atts.append(a)
            else:
                f = level.mid(p10[i])
            fused.append(f)
        if return_attention:
            return fused, atts
        return fused
