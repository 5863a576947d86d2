"""Network assembly: encoder -> FRM -> HCDD -> PPG."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import BackboneSpec, build_encoder, extract_features
from .frm import FRM, SCALES, make_scale_set
from .hcdd import FULL_DECODER_CHANNELS, HCDD
from .ppg import FEATURE_CHANNELS, Refiner, refine

TINY_DECODER_CHANNELS = (64, 32, 16, 16, 32)


class Prediction(NamedTuple):
    final_logits: torch.Tensor  # B x 1 x H x W
    coarse_logits: torch.Tensor  # B x 1 x H/2 x W/2
    trace: list[torch.Tensor]  # stride-2 logits, M_0 .. M_T


class MGNet(nn.Module):
    def __init__(self, profile: str = "tiny", level_channels=None, decoder_channels=None,
                 use_frm: bool = True, use_ppg: bool = True, t_refine: int = 2,
                 scales=SCALES, pair_mode: str = "carry", weights_source=None, freeze_bn: bool = False):
        super().__init__()
        spec = BackboneSpec(profile=profile, level_channels=level_channels,
                            weights_source=weights_source, freeze_bn=freeze_bn)
        if decoder_channels is None:
            decoder_channels = FULL_DECODER_CHANNELS if profile == "full" else TINY_DECODER_CHANNELS
        if decoder_channels[-1] != FEATURE_CHANNELS:
            raise ValueError(f"last decoder width must be {FEATURE_CHANNELS}, got {decoder_channels[-1]}")
        if len(scales) != 3 or 1.0 not in scales:
            raise ValueError("scales must be three values including 1.0")
        self.use_frm = use_frm
        self.use_ppg = use_ppg
        self.t_refine = t_refine
        self.scales = tuple(sorted(scales))
        self.encoder = build_encoder(spec)
        self.frm = FRM(spec.level_channels, multi_scale=use_frm)
        self.decoder = HCDD(spec.level_channels, tuple(decoder_channels), pair_mode=pair_mode)
        self.refiner = Refiner(FEATURE_CHANNELS) if use_ppg else None

    def fused_features(self, image):
        if not self.use_frm:
            p10 = extract_features(self.encoder, image).levels
            return self.frm(None, p10, None)
        small, base, large = make_scale_set(image, self.scales)
        p07 = extract_features(self.encoder, small, self.scales[0]).levels
        p10 = extract_features(self.encoder, base, 1.0).levels
        p12 = extract_features(self.encoder, large, self.scales[2]).levels
        return self.frm(p12, p10, p07)

    def forward(self, image: torch.Tensor) -> Prediction:
        fused = self.fused_features(image)
        x, coarse = self.decoder(fused)
        if self.use_ppg:
            final, trace = refine(self.refiner, x, coarse, self.t_refine)
        else:
            final, trace = coarse, [coarse]
        final = F.interpolate(final, size=image.shape[-2:], mode="bilinear", align_corners=False)
        return Prediction(final, coarse, trace)


def forward(model: MGNet, image: torch.Tensor) -> Prediction:
    return model(image)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
