"""Patch-level conditional discriminator.

Judges (L, ab) stacks: (L, true chroma) should score real, (L, generated
chroma) fake. Three stride-2 conv stages with ReLU, then a 1-channel conv,
so a 256x256 input yields a 32x32 grid of patch logits. Each training stage
(instance / fusion) owns an independent instance of this network.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .ioc import init_params


class PatchDiscriminator(nn.Module):
    def __init__(self, channels: tuple[int, int, int] = (64, 128, 256)):
        super().__init__()
        self.channels = tuple(channels)
        layers: list[nn.Module] = []
        prev = 3
        for c in self.channels:
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.ReLU(inplace=False)]
            prev = c
        layers.append(nn.Conv2d(prev, 1, 3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)
        init_params(self)

    def forward(self, L_n: torch.Tensor, ab: torch.Tensor) -> torch.Tensor:
        """(B,1,H,W) luminance + (B,2,H,W) chroma -> (B,1,H/8,W/8) logits."""
        if L_n.dim() == 3:
            L_n = L_n.unsqueeze(0)
        if ab.dim() == 3:
            ab = ab.unsqueeze(0)
        if L_n.dim() != 4 or ab.dim() != 4 or L_n.shape[1] != 1 or ab.shape[1] != 2:
            raise ValueError(
                f"expected (B,1,H,W) and (B,2,H,W), got {tuple(L_n.shape)} "
                f"and {tuple(ab.shape)}"
            )
        if L_n.shape[0] != ab.shape[0] or L_n.shape[2:] != ab.shape[2:]:
            raise ValueError(
                f"luminance/chroma shape mismatch: {tuple(L_n.shape)} vs {tuple(ab.shape)}"
            )
        return self.net(torch.cat([L_n, ab], dim=1))

    def arch_descriptor(self) -> dict:
        return {"kind": "patch_discriminator", "channels": list(self.channels)}
