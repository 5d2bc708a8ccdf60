"""Adversarial critic: residual downsampling to 4x4, global sum, linear head.

Scores are unbounded reals (no sigmoid), as the hinge objective requires.
No spectral normalization; the gradient penalty is the only critic
regularizer. Widths follow the generator's channel schedule.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .config import ModelConfig
from .errors import ResolutionMismatch, ShapeMismatch
from .generator import LEAK, _init_module


class DownBlock(nn.Module):
    """Unnormalized pre-activation residual block that halves resolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, LEAK))
        h = F.avg_pool2d(h, 2)
        h = self.conv2(F.leaky_relu(h, LEAK))
        s = F.avg_pool2d(self.shortcut(x), 2)
        return h + s


class Discriminator(nn.Module):
    FINAL_RESOLUTION = 4

    def __init__(self, config: ModelConfig, seed: int = 1):
        super().__init__()
        self.resolution = config.resolution
        c = config.channels
        self.stem = nn.Conv2d(3, c(config.resolution), 3, padding=1)
        blocks = []
        r = config.resolution
        while r > self.FINAL_RESOLUTION:
            in_ch = min(config.channel_cap, config.base_channels * (config.resolution // r))
            out_ch = min(config.channel_cap, config.base_channels * (config.resolution // (r // 2)))
            blocks.append(DownBlock(in_ch, out_ch))
            r //= 2
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(blocks[-1].conv2.out_channels if blocks else c(r), 1)
        _init_module(self, torch.Generator().manual_seed(seed))

    @property
    def downsample_count(self) -> int:
        return len(self.blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeMismatch(f"expected Bx3xHxW batch, got {tuple(x.shape)}")
        if x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ResolutionMismatch(
                f"critic expects {self.resolution}x{self.resolution}, got {x.shape[2]}x{x.shape[3]}"
            )
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        h = F.leaky_relu(h, LEAK).sum(dim=(2, 3))
        return self.head(h).squeeze(1)
