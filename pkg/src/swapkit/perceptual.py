"""Perceptual feature adapters: five tap points per image.

The deep-feature loss sums mean absolute differences across taps 0..4. A
pretrained VGG-class extractor can be wrapped behind the same interface; the
two adapters here keep the suite self-contained and deterministic.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

TAP_COUNT = 5


class IdentityTapsPerceptual(nn.Module):
    """Five taps, each the raw input. Makes loss values hand-computable."""

    tap_count = TAP_COUNT

    def taps(self, x: torch.Tensor) -> list:
        return [x] * TAP_COUNT

    def forward(self, x):
        return self.taps(x)


class SeededPerceptual(nn.Module):
    """Frozen seeded conv stack with five tap points of decreasing resolution."""

    tap_count = TAP_COUNT

    def __init__(self, width: int = 8, seed: int = 7):
        super().__init__()
        self.seed = seed
        widths = [width * (i + 1) for i in range(TAP_COUNT)]
        convs = []
        in_ch = 3
        for w in widths:
            convs.append(nn.Conv2d(in_ch, w, 3, padding=1))
            in_ch = w
        self.convs = nn.ModuleList(convs)
        self.feature_dim = widths[-1]
        gen = torch.Generator().manual_seed(seed)
        for conv in self.convs:
            fan_in = conv.weight.shape[1:].numel()
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * (1.0 / fan_in) ** 0.5
                )
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def taps(self, x: torch.Tensor) -> list:
        out = []
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            out.append(x)
            if i < len(self.convs) - 1 and x.shape[-1] > 4:
                x = F.avg_pool2d(x, 2)
        return out

    def forward(self, x):
        return self.taps(x)

    def deep_features(self, x: torch.Tensor) -> torch.Tensor:
        """Deepest tap, spatially pooled: the default distribution-metric features."""
        return self.taps(x)[-1].mean(dim=(2, 3))

    @property
    def extractor_id(self) -> str:
        return f"SeededPerceptual(width={self.convs[0].out_channels},seed={self.seed})"
