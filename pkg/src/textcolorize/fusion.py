"""Scene-level fusion generator.

Takes the merged, partially colorized scene (L plane + pasted instance
chroma) plus the whole-scene caption embedding, and predicts the final
chroma planes. Same gated-UNet backbone as the instance colorizer, with
three input channels and no classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .ioc import Decoder, Encoder, TextProjection, init_params, stage_channels


@dataclass
class FusionOutput:
    ab_final: torch.Tensor  # (B, 2, R, R) in [-1, 1]


class FusionColorizer(nn.Module):
    def __init__(self, resolution: int = 256, base_channels: int = 64):
        super().__init__()
        self.resolution = resolution
        self.base_channels = base_channels
        self.in_channels = 3
        self.channels = stage_channels(resolution, base_channels)
        self.encoder = Encoder(self.in_channels, self.channels)
        self.text_projection = TextProjection()
        self.decoder = Decoder(self.channels, out_channels=2)
        init_params(self)
        nn.init.ones_(self.text_projection.fc3.bias)

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        expected = (3, self.resolution, self.resolution)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"expected merged input of shape (B, 3, {self.resolution}, "
                f"{self.resolution}), got {tuple(x.shape)}"
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

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> FusionOutput:
        conditioned, feats = self.conditioned_bottleneck(x, emb)
        return FusionOutput(ab_final=self.decoder(conditioned, feats[:-1]))

    def arch_descriptor(self) -> dict:
        return {
            "kind": "fusion",
            "resolution": self.resolution,
            "base_channels": self.base_channels,
            "in_channels": self.in_channels,
        }
