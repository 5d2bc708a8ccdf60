"""Shared test machinery: independent oracles and tiny differentiable stand-ins."""

import numpy as np
import torch
from torch import nn


def finite_difference_check(fn, inputs, rel_tol=1e-3, eps=1e-5):
    """Compare autograd input-gradients of the scalar fn against central
    differences, elementwise. Inputs must be float64 leaves with grads."""
    with torch.enable_grad():
        loss = fn(*inputs)
        grads = torch.autograd.grad(loss, inputs)

    def value():
        with torch.enable_grad():
            return float(fn(*inputs).detach())

    for x, g in zip(inputs, grads):
        flat = x.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i].detach())
            with torch.no_grad():
                flat[i] = orig + eps
            up = value()
            with torch.no_grad():
                flat[i] = orig - eps
            down = value()
            with torch.no_grad():
                flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = float(gf[i])
            tol = rel_tol * max(1.0, abs(numeric), abs(analytic))
            assert abs(numeric - analytic) <= tol, (
                f"gradient mismatch at flat index {i}: numeric {numeric}, "
                f"analytic {analytic}"
            )


def brute_force_eer(genuine, impostor):
    """Direct-counting threshold sweep; independent of the vectorized path."""
    g = sorted(float(v) for v in genuine)
    m = sorted(float(v) for v in impostor)
    vals = sorted(set(g) | set(m))
    thresholds = [vals[0] - 1.0] + vals + [vals[-1] + 1.0]
    points = []
    for t in thresholds:
        far = sum(1 for v in m if v < t) / len(m)
        frr = sum(1 for v in g if v >= t) / len(g)
        points.append((far, frr))
    for i in range(1, len(points)):
        d_prev = points[i - 1][0] - points[i - 1][1]
        d_here = points[i][0] - points[i][1]
        if d_here >= 0.0:
            if d_here == d_prev:
                return points[i][0]
            alpha = -d_prev / (d_here - d_prev)
            return points[i - 1][0] + alpha * (points[i][0] - points[i - 1][0])
    return points[-1][0]


class LinearFeatureBackbone:
    """Duck-typed backbone whose block features are fixed linear maps of the
    flattened input; float64 and exactly differentiable."""

    def __init__(self, in_dim=48, out_dim=6, block_count=4, seed=0):
        gen = torch.Generator().manual_seed(seed)
        self.block_count = block_count
        self.maps = [
            torch.randn(in_dim, out_dim, generator=gen, dtype=torch.float64)
            for _ in range(block_count)
        ]

    def feature_batch(self, x, first, last):
        flat = x.reshape(x.shape[0], -1).to(torch.float64)
        return [flat @ self.maps[i] for i in range(first - 1, last)]

    def embed_batch(self, x):
        flat = x.reshape(x.shape[0], -1).to(torch.float64)
        return flat @ self.maps[0]


class MiniGenerator(nn.Module):
    """Tiny conditional image-to-image net for cycle-loss gradient checks."""

    def __init__(self, channels=3, cond_dim=6, seed=0):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.cond = nn.Linear(cond_dim, channels)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.3)
        self.double()

    def forward(self, x, z):
        return torch.tanh(self.conv(x) + self.cond(z.to(torch.float64))[:, :, None, None])


class LinearCritic(nn.Module):
    """D(x) = <w, x>; the input-gradient norm is exactly ||w||."""

    def __init__(self, dim, norm=1.0, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        w = torch.randn(dim, generator=gen, dtype=torch.float64)
        w = w / w.norm() * norm
        self.register_buffer("w", w)

    def forward(self, x):
        return x.reshape(x.shape[0], -1) @ self.w


class ConstantCritic(nn.Module):
    def forward(self, x):
        return torch.full((x.shape[0],), 2.5, dtype=x.dtype)


class FlatCritic(nn.Module):
    """Small nonlinear critic for finite-difference checks."""

    def __init__(self, dim, seed=0):
        super().__init__()
        self.lin1 = nn.Linear(dim, 8)
        self.lin2 = nn.Linear(8, 1)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.5)
        self.double()

    def forward(self, x):
        h = torch.tanh(self.lin1(x.reshape(x.shape[0], -1)))
        return self.lin2(h).squeeze(1)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio between two uint8 images, in dB."""
    x = a.astype(np.float64) / 255.0
    y = b.astype(np.float64) / 255.0
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)
