"""Instance colorization generator: text-gated UNet with a classifier head.

The encoder halves resolution per stage down to a fixed 8x8x64 bottleneck.
The caption embedding runs through three dense layers (256 -> 256 -> 1024 ->
4096), is reshaped to 8x8x64 and multiplied element-wise into the bottleneck,
so language gates the image features before decoding. The decoder mirrors
the encoder with skip connections and ends in a 1x1 conv + tanh producing the
two chroma planes. A small conv/dense head classifies the conditioned
bottleneck over the 80 detector classes.

The architecture is resolution-parametric: the stage count is
log2(resolution/8), so the bottleneck (and with it the text pathway) is the
same at 256x256 and at the reduced sizes used for fast training and gradient
checks. Channel progressions per resolution are listed in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

BOTTLENECK_SIZE = 8
BOTTLENECK_CHANNELS = 64
TEXT_WIDTHS = (256, 1024, 4096)
NUM_CLASSES = 80


@dataclass
class IOCOutput:
    ab_pred: torch.Tensor  # (B, 2, R, R) in [-1, 1]
    class_logits: torch.Tensor  # (B, 80)


def stage_channels(resolution: int, base_channels: int) -> list[int]:
    """Per-stage encoder channels; the last stage is pinned to 64."""
    if resolution < 2 * BOTTLENECK_SIZE or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 16, got {resolution}")
    n_stages = int(math.log2(resolution // BOTTLENECK_SIZE))
    chans = [min(base_channels * 2**i, 512) for i in range(n_stages - 1)]
    return chans + [BOTTLENECK_CHANNELS]


def init_params(module: nn.Module) -> None:
    """Fan-in-scaled Gaussian init; draws from torch's global RNG."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (
                m.weight.shape[2] * m.weight.shape[3] if m.weight.dim() == 4 else 1
            )
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = m.weight.shape[0] * m.weight.shape[2] * m.weight.shape[3]
            nn.init.normal_(m.weight, std=math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class TextProjection(nn.Module):
    """Caption embedding -> 8x8x64 gating block via three dense layers."""

    def __init__(self):
        super().__init__()
        self.fc1 = nn.Linear(256, TEXT_WIDTHS[0])
        self.fc2 = nn.Linear(TEXT_WIDTHS[0], TEXT_WIDTHS[1])
        self.fc3 = nn.Linear(TEXT_WIDTHS[1], TEXT_WIDTHS[2])
        self.relu = nn.ReLU(inplace=False)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        if emb.dim() == 1:
            emb = emb.unsqueeze(0)
        if emb.shape[-1] != 256 or emb.dim() != 2:
            raise ValueError(f"expected (B, 256) embedding, got {tuple(emb.shape)}")
        if not torch.isfinite(emb).all():
            raise ValueError("embedding contains non-finite values")
        x = self.relu(self.fc1(emb))
        x = self.relu(self.fc2(x))
        x = self.fc3(x)
        return x.view(-1, BOTTLENECK_CHANNELS, BOTTLENECK_SIZE, BOTTLENECK_SIZE)


class Encoder(nn.Module):
    def __init__(self, in_channels: int, channels: list[int]):
        super().__init__()
        self.stages = nn.ModuleList()
        prev = in_channels
        for c in channels:
            self.stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, c, kernel_size=4, stride=2, padding=1),
                    nn.BatchNorm2d(c),
                    nn.ReLU(inplace=False),
                )
            )
            prev = c

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Mirror of the encoder: upconv stages with skip concatenation."""

    def __init__(self, channels: list[int], out_channels: int = 2):
        super().__init__()
        self.ups = nn.ModuleList()
        n = len(channels)
        in_ch = channels[-1]
        for i in range(n - 2, -1, -1):
            self.ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(in_ch, channels[i], 4, stride=2, padding=1),
                    nn.BatchNorm2d(channels[i]),
                    nn.ReLU(inplace=False),
                )
            )
            in_ch = 2 * channels[i]  # after skip concat
        self.ups.append(
            nn.Sequential(
                nn.ConvTranspose2d(in_ch, channels[0], 4, stride=2, padding=1),
                nn.BatchNorm2d(channels[0]),
                nn.ReLU(inplace=False),
            )
        )
        self.head = nn.Conv2d(channels[0], out_channels, kernel_size=1)
        self.tanh = nn.Tanh()

    def forward(self, bottleneck: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = bottleneck
        for i, up in enumerate(self.ups[:-1]):
            x = up(x)
            x = torch.cat([x, skips[-(i + 1)]], dim=1)
        x = self.ups[-1](x)
        return self.tanh(self.head(x))


class ClassifierHead(nn.Module):
    """Three convs + one dense layer over the conditioned 8x8x64 bottleneck."""

    def __init__(self, num_classes: int = NUM_CLASSES):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(BOTTLENECK_CHANNELS, 32, 3, stride=2, padding=1),  # 8 -> 4
            nn.ReLU(inplace=False),
            nn.Conv2d(32, 16, 3, stride=2, padding=1),  # 4 -> 2
            nn.ReLU(inplace=False),
            nn.Conv2d(16, 16, 3, stride=1, padding=1),  # 2 -> 2
            nn.ReLU(inplace=False),
        )
        self.fc = nn.Linear(16 * 2 * 2, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.conv(x).flatten(1))


class InstanceColorizer(nn.Module):
    """Gray instance crop + caption embedding -> chroma planes + class logits."""

    def __init__(
        self,
        resolution: int = 256,
        base_channels: int = 64,
        num_classes: int = NUM_CLASSES,
        in_channels: int = 1,
    ):
        super().__init__()
        self.resolution = resolution
        self.base_channels = base_channels
        self.in_channels = in_channels
        self.channels = stage_channels(resolution, base_channels)
        self.encoder = Encoder(in_channels, self.channels)
        self.text_projection = TextProjection()
        self.decoder = Decoder(self.channels, out_channels=2)
        self.classifier = ClassifierHead(num_classes)
        init_params(self)
        # gate starts near unity: the image pathway trains from step one and
        # the caption modulates multiplicatively around pass-through
        nn.init.ones_(self.text_projection.fc3.bias)

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        expected = (self.in_channels, self.resolution, self.resolution)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"expected input of shape (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {tuple(x.shape)}"
            )
        return x

    def conditioned_bottleneck(
        self, x: torch.Tensor, emb: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        x = self._check_input(x)
        feats = self.encoder(x)
        gate = self.text_projection(emb)
        if gate.shape[0] != feats[-1].shape[0]:
            raise ValueError(
                f"batch mismatch: image batch {feats[-1].shape[0]}, "
                f"embedding batch {gate.shape[0]}"
            )
        return feats[-1] * gate, feats

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> IOCOutput:
        conditioned, feats = self.conditioned_bottleneck(x, emb)
        ab = self.decoder(conditioned, feats[:-1])
        logits = self.classifier(conditioned)
        return IOCOutput(ab_pred=ab, class_logits=logits)

    def arch_descriptor(self) -> dict:
        return {
            "kind": "ioc",
            "resolution": self.resolution,
            "base_channels": self.base_channels,
            "in_channels": self.in_channels,
            "num_classes": self.classifier.fc.out_features,
        }
