"""Shared five-level convolutional backbone."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .checkpoint import read_container, write_container

LEVEL_STRIDES = (2, 4, 8, 16, 32)
FULL_CHANNELS = (64, 256, 512, 1024, 2048)
TINY_CHANNELS = (8, 16, 32, 64, 128)


@dataclass
class BackboneSpec:
    profile: str = "tiny"
    level_channels: tuple[int, ...] | None = None
    level_strides: tuple[int, ...] = LEVEL_STRIDES
    weights_source: str | None = None
    freeze_bn: bool = False

    def __post_init__(self):
        if self.profile not in ("full", "tiny"):
            raise ValueError(f"unknown backbone profile {self.profile!r}")
        if self.level_channels is None:
            self.level_channels = FULL_CHANNELS if self.profile == "full" else TINY_CHANNELS
        self.level_channels = tuple(int(c) for c in self.level_channels)
        self.level_strides = tuple(int(s) for s in self.level_strides)
        self.validate()

    def validate(self) -> None:
        if len(self.level_channels) != 5:
            raise ValueError(f"backbone needs exactly 5 levels, got {len(self.level_channels)}")
        if any(c <= 0 for c in self.level_channels):
            raise ValueError("level channels must be positive")
        if self.level_strides != LEVEL_STRIDES:
            raise ValueError(f"level strides must be {list(LEVEL_STRIDES)}")
        if self.profile == "full" and self.level_channels != FULL_CHANNELS:
            raise ValueError(f"full profile has fixed channels {list(FULL_CHANNELS)}")
        if self.profile == "tiny" and self.weights_source is not None:
            raise ValueError("pretrained weights unsupported for tiny")


@dataclass
class LevelMeta:
    channels: int
    stride: int
    source_scale: float = 1.0


@dataclass
class FeaturePyramid:
    """Five feature maps, shallowest (stride 2) first."""

    levels: list[torch.Tensor]
    meta: list[LevelMeta] = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def sizes(self) -> list[tuple[int, int]]:
        return [tuple(t.shape[-2:]) for t in self.levels]


def conv_bn_relu(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module):
    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        if spec.profile == "full":
            from torchvision.models import resnext101_32x8d

            body = resnext101_32x8d(weights=None)
            # nothing past layer4 is used
            del body.avgpool, body.fc
            self.body = body
            self.stages = None
        else:
            self.body = None
            chans = (3,) + spec.level_channels
            self.stages = nn.ModuleList(
                conv_bn_relu(chans[i], chans[i + 1], 3, stride=2) for i in range(5)
            )

    @property
    def level_channels(self) -> tuple[int, ...]:
        return self.spec.level_channels

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if self.stages is not None:
            out = []
            for stage in self.stages:
                x = stage(x)
                out.append(x)
            return out
        b = self.body
        c1 = b.relu(b.bn1(b.conv1(x)))
        c2 = b.layer1(b.maxpool(c1))
        c3 = b.layer2(c2)
        c4 = b.layer3(c3)
        c5 = b.layer4(c4)
        return [c1, c2, c3, c4, c5]

    def train(self, mode: bool = True):
        super().train(mode)
        if mode and self.spec.freeze_bn:
            for m in self.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.eval()
        return self


def build_encoder(spec: BackboneSpec) -> Encoder:
    spec.validate()
    enc = Encoder(spec)
    if spec.freeze_bn:
        for m in enc.modules():
            if isinstance(m, nn.BatchNorm2d):
                for p in m.parameters():
                    p.requires_grad_(False)
    if spec.weights_source is not None:
        load_pretrained(enc, spec.weights_source)
    return enc


def load_pretrained(encoder: Encoder, weights_source) -> dict[str, list[str]]:
    """Overwrite every backbone tensor from a checkpoint container.

    Keys may carry an ``encoder.`` prefix (as in a whole-model checkpoint).
    Returns a manifest ``{"loaded": [...], "skipped": [...]}`` where skipped
    lists file entries that do not belong to the backbone.
    """
    if encoder.spec.profile != "full":
        raise ValueError("pretrained weights unsupported for tiny")
    path = Path(weights_source)
    if not path.is_file():
        raise FileNotFoundError(f"weights file not found: {path}")
    params = read_container(path)["params"]

    own = encoder.state_dict()
    incoming = {}
    skipped = []
    for key, value in params.items():
        name = key[len("encoder."):] if key.startswith("encoder.") else key
        if name in own:
            incoming[name] = value
        else:
            skipped.append(key)
    missing = sorted(set(own) - set(incoming))
    if missing:
        raise ValueError(f"weights file lacks {len(missing)} backbone tensors, e.g. {missing[0]}")
    for name, value in incoming.items():
        if tuple(value.shape) != tuple(own[name].shape):
            raise ValueError(
                f"shape mismatch for parameter {name}: file {tuple(value.shape)}, "
                f"model {tuple(own[name].shape)}"
            )
    encoder.load_state_dict(incoming, strict=True)
    return {"loaded": sorted(incoming), "skipped": sorted(skipped)}


def export_backbone(encoder_or_state, path, from_torchvision: bool = False) -> Path:
    """Write backbone weights into a container usable by :func:`load_pretrained`.

    With ``from_torchvision=True`` the input is a plain torchvision ResNeXt
    state dict (e.g. ImageNet weights); its classifier head is dropped.
    """
    if isinstance(encoder_or_state, nn.Module):
        state = encoder_or_state.state_dict()
    else:
        state = dict(encoder_or_state)
    if from_torchvision:
        state = {f"body.{k}": v for k, v in state.items() if not k.startswith("fc.")}
    return write_container(path, params=state)


def extract_features(encoder: Encoder, image: torch.Tensor, source_scale: float = 1.0) -> FeaturePyramid:
    """Run the backbone on a normalized ``B x 3 x H x W`` batch."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValueError(f"expected B x 3 x H x W image, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h < 32 or w < 32 or h % 2 or w % 2:
        raise ValueError(f"input size must be even and >= 32, got {h}x{w}")
    if image.device.type != "meta" and not torch.isfinite(image).all():
        raise ValueError("input image contains non-finite values")
    levels = encoder(image)
    meta = [
        LevelMeta(channels=c, stride=s, source_scale=source_scale)
        for c, s in zip(encoder.level_channels, LEVEL_STRIDES)
    ]
    return FeaturePyramid(levels=levels, meta=meta)


def expected_level_sizes(h: int, w: int) -> list[tuple[int, int]]:
    return [(math.ceil(h / s), math.ceil(w / s)) for s in LEVEL_STRIDES]
