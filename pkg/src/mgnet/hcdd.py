"""Hierarchical channel-down decoder.

Five units run deepest level first. Each unit merges its fused feature with
the upsampled output of the previous unit, then lets six channel chunks
interact through a chain of concat-conv-BN-ReLU-split groups and reweights
the result with a squeeze-style gate.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import conv_bn_relu

FULL_DECODER_CHANNELS = (1024, 512, 256, 64, 32)


class CCBRS(nn.Module):
    """Concat -> 3x3 conv -> BN -> ReLU -> split into ``parts`` chunks of ``width``."""

    def __init__(self, in_ch: int, width: int, parts: int):
        super().__init__()
        self.width = width
        self.parts = parts
        self.cbr = conv_bn_relu(in_ch, width * parts, 3)

    def forward(self, *xs):
        x = xs[0] if len(xs) == 1 else torch.cat(xs, dim=1)
        return torch.split(self.cbr(x), self.width, dim=1)


class WeightGenerator(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, m):
        s = F.adaptive_avg_pool2d(m, 1)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))


class HCDU(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, prev_channels: int | None = None,
                 group_width: int | None = None, pair_mode: str = "carry"):
        super().__init__()
        if out_channels % 2:
            raise ValueError(f"HCDU out_channels must be even, got {out_channels}")
        if pair_mode not in ("carry", "raw"):
            raise ValueError(f"unknown pair_mode {pair_mode!r}")
        cu = group_width or out_channels // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.group_width = cu
        self.pair_mode = pair_mode

        self.prev_channels = prev_channels
        self.reduce = conv_bn_relu(in_channels, out_channels, 3)
        # the previous unit is wider; project it onto this unit's width before the sum
        if prev_channels is not None and prev_channels != out_channels:
            self.prev_proj = nn.Conv2d(prev_channels, out_channels, 1, bias=False)
        else:
            self.prev_proj = nn.Identity()
        self.expand = conv_bn_relu(out_channels, 6 * out_channels, 1)
        self.solo_first = CCBRS(out_channels, cu, 2)
        self.solo_last = CCBRS(out_channels, cu, 2)
        pairs = []
        for j in range(5):
            if pair_mode == "raw" or j == 0:
                in_ch = 2 * out_channels
            else:
                in_ch = cu + out_channels
            pairs.append(CCBRS(in_ch, cu, 3))
        self.pairs = nn.ModuleList(pairs)
        self.weight = WeightGenerator(7 * cu)
        self.fuse_conv = nn.Conv2d(7 * cu, out_channels, 3, padding=1, bias=False)
        self.fuse_bn = nn.BatchNorm2d(out_channels)

    def merge(self, f_i, f_prev=None):
        f = self.reduce(f_i)
        if f_prev is not None:
            f_prev = self.prev_proj(f_prev)
            if f_prev.shape[1] != f.shape[1]:
                raise ValueError(
                    f"previous unit has {f_prev.shape[1]} channels, expected {f.shape[1]}"
                )
            f = f + F.interpolate(f_prev, size=f.shape[-2:], mode="bilinear", align_corners=False)
        return f

    def groups(self, f):
        """Return the seven group outputs in order: solo k1, pairs 1..5, solo k6."""
        k = torch.split(self.expand(f), self.out_channels, dim=1)
        out = [self.solo_first(k[0])]
        carry = k[0]
        for j, pair in enumerate(self.pairs):
            left = k[j] if self.pair_mode == "raw" else carry
            g = pair(left, k[j + 1])
            out.append(g)
            carry = g[1]
        out.append(self.solo_last(k[5]))
        return out

    def pyramid(self, f, return_state: bool = False):
        groups = self.groups(f)
        t = torch.cat([g[0] for g in groups], dim=1)
        m = torch.cat([g[-1] for g in groups], dim=1)
        w = self.weight(m)
        out = F.relu(f + self.fuse_bn(self.fuse_conv(w * t)))
        if return_state:
            return out, {"groups": groups, "T": t, "M": m, "w": w}
        return out

    def forward(self, f_i, f_prev=None):
        return self.pyramid(self.merge(f_i, f_prev))


class HCDD(nn.Module):
    """Decoder over fused features ordered shallowest first (as the encoder emits them)."""

    def __init__(self, level_channels, decoder_channels=FULL_DECODER_CHANNELS, pair_mode: str = "carry"):
        super().__init__()
        if len(level_channels) != 5 or len(decoder_channels) != 5:
            raise ValueError("HCDD needs 5 levels")
        deep_first = list(level_channels)[::-1]
        units = []
        prev = None
        for c_in, c_out in zip(deep_first, decoder_channels):
            units.append(HCDU(c_in, c_out, prev_channels=prev, pair_mode=pair_mode))
            prev = c_out
        self.units = nn.ModuleList(units)
        self.feature_channels = prev
        self.head = nn.Conv2d(prev, 1, 1)

    def forward(self, fused):
        if len(fused) != 5:
            raise ValueError(f"decoder expects 5 fused levels, got {len(fused)}")
        prev = None
        for unit, f_i in zip(self.units, reversed(fused)):
            prev = unit(f_i, prev)
        x = prev
        return x, self.head(x)


def decode(decoder: HCDD, fused):
    return decoder(fused)
