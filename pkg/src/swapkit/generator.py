"""Conditional U-Net generator.

Encoder residual blocks downsample by average pooling to the bottleneck;
decoder residual blocks condition on the mapped identity via adaptive
instance normalization and merge encoder skips per the fusion plan
(gated blend, concatenation, addition, or nothing). A four-layer mapping
network transforms the raw identity embedding when enabled.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .config import ModelConfig
from .errors import ShapeMismatch

LEAK = 0.2
ADAIN_EPS = 1e-5


def _init_module(module: nn.Module, gen: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1:].numel() if m.weight.dim() > 1 else m.weight.shape[0]
            std = (1.0 / max(fan_in, 1)) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()


class MappingNetwork(nn.Module):
    """Four 512->512 linear layers, leaky ReLU after the first three."""

    def __init__(self, dim: int = 512):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(dim, dim) for _ in range(4))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        w = z
        for i, layer in enumerate(self.layers):
            w = layer(w)
            if i < 3:
                w = F.leaky_relu(w, LEAK)
        return w


class AdaIN(nn.Module):
    """Instance-normalize, then scale/shift from the conditioning vector.

    The scale head is centred at 1 (scale = 1 + gamma(w)) so a zero-weight
    head leaves activations unit-variance at initialization.
    """

    def __init__(self, channels: int, cond_dim: int = 512):
        super().__init__()
        self.gamma = nn.Linear(cond_dim, channels)
        self.beta = nn.Linear(cond_dim, channels)

    def forward(self, h: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        normed = F.instance_norm(h, eps=ADAIN_EPS)
        scale = 1.0 + self.gamma(w)
        shift = self.beta(w)
        return normed * scale[:, :, None, None] + shift[:, :, None, None]


def affa_blend(h: torch.Tensor, z_a: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Elementwise gated fusion: h * m + (1 - m) * z_a."""
    if h.shape != z_a.shape or h.shape != mask.shape:
        raise ShapeMismatch(
            f"fusion operands must match: {tuple(h.shape)} vs {tuple(z_a.shape)} vs {tuple(mask.shape)}"
        )
    return h * mask + (1.0 - mask) * z_a


class AFFAGate(nn.Module):
    """Mask head for gated fusion: two 3x3 convs over concat(h, z_a), sigmoid out.

    The final conv starts at zero so masks begin at 0.5 (unbiased fusion).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def zero_init_output(self):
        with torch.no_grad():
            self.conv2.weight.zero_()
            self.conv2.bias.zero_()

    def mask(self, h: torch.Tensor, z_a: torch.Tensor) -> torch.Tensor:
        if h.shape != z_a.shape:
            raise ShapeMismatch(f"gate operands must match: {tuple(h.shape)} vs {tuple(z_a.shape)}")
        x = torch.cat([h, z_a], dim=1)
        x = F.leaky_relu(self.conv1(x), LEAK)
        return torch.sigmoid(self.conv2(x))

    def forward(self, h, z_a):
        return affa_blend(h, z_a, self.mask(h, z_a))


class EncoderBlock(nn.Module):
    """Pre-activation residual block with unconditioned instance norm."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm1 = nn.InstanceNorm2d(in_ch, eps=ADAIN_EPS)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_ch, eps=ADAIN_EPS)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.leaky_relu(self.norm1(x), LEAK))
        h = self.conv2(F.leaky_relu(self.norm2(h), LEAK))
        return h + self.shortcut(x)


class DecoderBlock(nn.Module):
    """Identity-conditioned residual block with skip fusion.

    Order per stage: AdaIN on the incoming map, fuse with the skip, then the
    two convolutions (the second also preceded by AdaIN). The fused tensor
    feeds the residual shortcut.
    """

    def __init__(self, channels: int, fusion: str, cond_dim: int = 512):
        super().__init__()
        self.fusion = fusion
        self.adain1 = AdaIN(channels, cond_dim)
        conv_in = 2 * channels if fusion == "concat" else channels
        self.conv1 = nn.Conv2d(conv_in, channels, 3, padding=1)
        self.adain2 = AdaIN(channels, cond_dim)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.gate = AFFAGate(channels) if fusion == "affa" else None
        self.shortcut = nn.Conv2d(conv_in, channels, 1) if fusion == "concat" else nn.Identity()
        self.last_mask = None

    def forward(self, x: torch.Tensor, z_a: torch.Tensor | None, w: torch.Tensor) -> torch.Tensor:
        h = self.adain1(x, w)
        self.last_mask = None
        if self.fusion == "none" or z_a is None:
            fused = h
        elif self.fusion == "affa":
            mask = self.gate.mask(h, z_a)
            self.last_mask = mask
            fused = affa_blend(h, z_a, mask)
        elif self.fusion == "concat":
            if h.shape[1] != z_a.shape[1] or h.shape[2:] != z_a.shape[2:]:
                raise ShapeMismatch(
                    f"concat operands must match: {tuple(h.shape)} vs {tuple(z_a.shape)}"
                )
            fused = torch.cat([h, z_a], dim=1)
        elif self.fusion == "add":
            if h.shape != z_a.shape:
                raise ShapeMismatch(f"add operands must match: {tuple(h.shape)} vs {tuple(z_a.shape)}")
            fused = h + z_a
        else:
            raise ShapeMismatch(f"unknown fusion mode {self.fusion!r}")
        y = self.conv1(F.leaky_relu(fused, LEAK))
        y = self.conv2(F.leaky_relu(self.adain2(y, w), LEAK))
        return y + self.shortcut(fused)


class Generator(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        res_desc = sorted(config.decoder_resolutions, reverse=True)
        self.res_desc = res_desc  # encoder order, working res down to bottleneck
        self.res_asc = list(reversed(res_desc))

        c = config.channels
        self.stem = nn.Conv2d(3, c(res_desc[0]), 3, padding=1)
        enc = []
        prev_ch = c(res_desc[0])
        for r in res_desc:
            enc.append(EncoderBlock(prev_ch, c(r)))
            prev_ch = c(r)
        self.encoder = nn.ModuleList(enc)

        self.mapping = MappingNetwork() if config.use_mapping else None

        dec = []
        proj = []
        for i, r in enumerate(self.res_asc):
            if i == 0:
                proj.append(nn.Identity())
            else:
                below = self.res_asc[i - 1]
                proj.append(
                    nn.Conv2d(c(below), c(r), 1) if c(below) != c(r) else nn.Identity()
                )
            dec.append(DecoderBlock(c(r), config.fusion_plan[r]))
        self.decoder = nn.ModuleList(dec)
        self.projections = nn.ModuleList(proj)
        self.head = nn.Conv2d(c(res_desc[0]), 3, 3, padding=1)

        gen = torch.Generator().manual_seed(seed)
        _init_module(self, gen)
        for block in self.decoder:
            if block.gate is not None:
                block.gate.zero_init_output()

    def map_identity(self, z_id: torch.Tensor) -> torch.Tensor:
        if self.mapping is None:
            return z_id
        return self.mapping(z_id)

    def forward(self, x_t: torch.Tensor, z_id: torch.Tensor) -> torch.Tensor:
        r = self.config.resolution
        if x_t.dim() != 4 or x_t.shape[1] != 3 or x_t.shape[2] != r or x_t.shape[3] != r:
            raise ShapeMismatch(
                f"generator expects Bx3x{r}x{r} input, got {tuple(x_t.shape)}"
            )
        if z_id.dim() != 2 or z_id.shape[0] != x_t.shape[0] or z_id.shape[1] != 512:
            raise ShapeMismatch(f"identity must be Bx512, got {tuple(z_id.shape)}")
        w = self.map_identity(z_id)

        skips = {}
        x = self.stem(x_t)
        for r_i, block in zip(self.res_desc, self.encoder):
            x = block(x)
            skips[r_i] = x
            if r_i != self.res_desc[-1]:
                x = F.avg_pool2d(x, 2)

        y = skips[self.res_asc[0]]
        for i, (r_i, block) in enumerate(zip(self.res_asc, self.decoder)):
            if i > 0:
                y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
                y = self.projections[i](y)
            y = block(y, skips[r_i], w)
        return torch.tanh(self.head(y))

    def attention_masks(self) -> dict:
        """Masks captured on the most recent forward, keyed by resolution."""
        out = {}
        for r_i, block in zip(self.res_asc, self.decoder):
            if block.last_mask is not None:
                out[r_i] = block.last_mask.detach()
        return out


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
