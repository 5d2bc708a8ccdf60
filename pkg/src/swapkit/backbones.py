"""Identity encoder adapters.

Every adapter exposes the same two views of a face: a 512-d identity
embedding and the ordered per-block intermediate feature maps. Adapters are
frozen; gradients may flow through their inputs but never into their weights.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .alignment import AlignedFace
from .errors import (
    CheckpointCorrupt,
    IndexOutOfRange,
    ResolutionMismatch,
    ShapeMismatch,
    ZeroVector,
)

EMBEDDING_DIM = 512
ARCHIVE_FORMAT_VERSION = 1
TAP_CONVENTION = "post_add_post_act"


@dataclass(frozen=True)
class IdentityEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vec.shape != (EMBEDDING_DIM,):
            raise ShapeMismatch(f"embedding must have {EMBEDDING_DIM} entries, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ShapeMismatch("embedding must be finite")
        object.__setattr__(self, "vector", vec)


@dataclass
class FeaturePyramid:
    """Blocks are 1-indexed slices blocks[first..last] of the backbone."""

    blocks: list
    first: int
    last: int

    def __len__(self):
        return len(self.blocks)


def cosine_distance(a, b) -> float:
    """1 - cosine similarity over flattened inputs, computed in float64."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.shape != bv.shape:
        raise ShapeMismatch(f"length mismatch: {av.shape} vs {bv.shape}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    return float(1.0 - (av @ bv) / (na * nb))


def face_tensor(face: AlignedFace) -> torch.Tensor:
    """AlignedFace -> 1x3xHxW float32 tensor."""
    return torch.from_numpy(face.pixels.transpose(2, 0, 1).copy()).unsqueeze(0)


def _seeded_init(module: nn.Module, gen: torch.Generator):
    """Fan-in scaled normal weights, zero biases, drawn from `gen`."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1:].numel() if m.weight.dim() > 1 else m.weight.shape[0]
            std = (1.0 / max(fan_in, 1)) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()


class BackboneAdapter(nn.Module):
    """Base class: frozen encoder with embed + per-block feature taps.

    Subclasses implement _forward(x) -> (embedding B x 512, blocks list).
    """

    def __init__(self, input_resolution: int, block_count: int, allow_resample: bool = True):
        super().__init__()
        self.input_resolution = input_resolution
        self.block_count = block_count
        self.allow_resample = allow_resample
        self.frozen = False

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def _prepare(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeMismatch(f"expected Bx3xHxW input, got {tuple(x.shape)}")
        if x.shape[-1] != self.input_resolution or x.shape[-2] != self.input_resolution:
            if not self.allow_resample:
                raise ResolutionMismatch(
                    f"input is {x.shape[-2]}x{x.shape[-1]}, adapter expects "
                    f"{self.input_resolution} and resampling is disabled"
                )
            x = F.interpolate(
                x,
                size=(self.input_resolution, self.input_resolution),
                mode="bilinear",
                align_corners=False,
            )
        return x

    def _forward(self, x: torch.Tensor):
        raise NotImplementedError

    def embed_batch(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable B x 512 embeddings (w.r.t. inputs only)."""
        emb, _ = self._forward(self._prepare(x))
        return emb

    def feature_batch(self, x: torch.Tensor, first: int, last: int) -> list:
        """Differentiable feature maps for blocks first..last (1-indexed, inclusive)."""
        if not (1 <= first <= last <= self.block_count):
            raise IndexOutOfRange(
                f"block range [{first}, {last}] outside 1..{self.block_count}"
            )
        _, blocks = self._forward(self._prepare(x))
        return blocks[first - 1 : last]

    @torch.no_grad()
    def embed(self, face: AlignedFace) -> IdentityEmbedding:
        vec = self.embed_batch(face_tensor(face))[0]
        return IdentityEmbedding(vec.double().numpy())

    @torch.no_grad()
    def intermediate_features(self, face: AlignedFace, first: int, last: int) -> FeaturePyramid:
        blocks = self.feature_batch(face_tensor(face), first, last)
        return FeaturePyramid(
            blocks=[b[0].double().numpy() for b in blocks], first=first, last=last
        )


class StubBackbone(BackboneAdapter):
    """Seeded random convolutional encoder for offline tests.

    Eight conv blocks with leaky ReLU, average-pooled down to 4x4, global
    mean pool, then a linear head to 512. All biases are zero, so the
    all-zero image maps to the all-zero embedding by construction.
    """

    def __init__(self, input_resolution: int = 64, width: int = 16, seed: int = 1):
        super().__init__(input_resolution=input_resolution, block_count=8)
        self.width = width
        self.seed = seed
        self.stem = nn.Conv2d(3, width, 3, padding=1)
        self.blocks = nn.ModuleList(
            nn.Conv2d(width, width, 3, padding=1) for _ in range(self.block_count)
        )
        self.head = nn.Linear(width, EMBEDDING_DIM)
        gen = torch.Generator().manual_seed(seed)
        _seeded_init(self, gen)
        self.freeze()

    def _forward(self, x: torch.Tensor):
        x = F.leaky_relu(self.stem(x), 0.2)
        blocks = []
        for i, conv in enumerate(self.blocks):
            x = F.leaky_relu(conv(x), 0.2)
            blocks.append(x)
            if i % 2 == 1 and x.shape[-1] > 4:
                x = F.avg_pool2d(x, 2)
        emb = self.head(x.mean(dim=(2, 3)))
        return emb, blocks


class _Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, planes: int, stride: int = 1):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = nn.Conv2d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        # tap convention: post-addition, post-activation
        return F.relu(y + self.shortcut(x))


class ResNetBackbone(BackboneAdapter):
    """Bottleneck ResNet in the ResNet50 layout: stages of 3/4/6/3 blocks.

    Sixteen block outputs are tapped post-addition, post-activation. The head
    is global average pooling plus a linear map to 512. Weights are loaded
    from an archive (pretrained) or seeded at random for harness tests.
    """

    STAGES = (3, 4, 6, 3)

    def __init__(self, input_resolution: int = 112, width: int = 64, seed: int = 0):
        super().__init__(input_resolution=input_resolution, block_count=sum(self.STAGES))
        self.width = width
        self.seed = seed
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        blocks = []
        in_ch = width
        planes = width
        for stage_idx, count in enumerate(self.STAGES):
            for block_idx in range(count):
                stride = 2 if block_idx == 0 else 1
                blocks.append(_Bottleneck(in_ch, planes, stride=stride))
                in_ch = planes * _Bottleneck.expansion
            planes *= 2
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(in_ch, EMBEDDING_DIM)
        gen = torch.Generator().manual_seed(seed)
        _seeded_init(self, gen)
        self.freeze()

    def _forward(self, x: torch.Tensor):
        x = self.stem(x)
        blocks = []
        for block in self.blocks:
            x = block(x)
            blocks.append(x)
        emb = self.head(x.mean(dim=(2, 3)))
        return emb, blocks


def backbone_id(adapter: BackboneAdapter) -> str:
    kind = type(adapter).__name__
    return f"{kind}(res={adapter.input_resolution},blocks={adapter.block_count},seed={getattr(adapter, 'seed', 'ext')})"


def save_backbone(adapter: BackboneAdapter, path):
    """Write the portable weight archive."""
    if isinstance(adapter, StubBackbone):
        kind, config = "stub", {
            "input_resolution": adapter.input_resolution,
            "width": adapter.width,
            "seed": adapter.seed,
        }
    elif isinstance(adapter, ResNetBackbone):
        kind, config = "resnet", {
            "input_resolution": adapter.input_resolution,
            "width": adapter.width,
            "seed": adapter.seed,
        }
    else:
        raise ValueError(f"unknown adapter type {type(adapter).__name__}")
    torch.save(
        {
            "format_version": ARCHIVE_FORMAT_VERSION,
            "kind": kind,
            "config": config,
            "taps": TAP_CONVENTION,
            "state_dict": adapter.state_dict(),
        },
        path,
    )


def load_backbone(path) -> BackboneAdapter:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointCorrupt(f"cannot read backbone archive {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format_version") != ARCHIVE_FORMAT_VERSION:
        raise CheckpointCorrupt(f"{path}: unrecognized backbone archive format")
    kind = blob.get("kind")
    config = blob.get("config", {})
    if kind == "stub":
        adapter = StubBackbone(**config)
    elif kind == "resnet":
        adapter = ResNetBackbone(**config)
    else:
        raise CheckpointCorrupt(f"{path}: unknown backbone kind {kind!r}")
    adapter.load_state_dict(blob["state_dict"])
    adapter.freeze()
    return adapter
