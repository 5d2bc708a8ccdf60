"""Training objectives.

Conventions: every norm over pixels or features is a mean absolute
difference, so loss magnitudes are resolution-independent and the default
term weights keep their intended balance. Identity and feature distances
are cosine distances over flattened tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch.nn import functional as F

from .errors import MissingMargin, ShapeMismatch, ZeroVector


@dataclass
class LossWeights:
    lambda_adv: float = 1.0
    lambda_i: float = 10.0
    lambda_r: float = 5.0
    lambda_p: float = 0.2
    lambda_c: float = 1.0
    lambda_ifsr: float = 1.0
    lambda_gp: float = 10.0


@dataclass
class LossReport:
    """Per-term scalars plus the weighted generator total."""

    terms: dict
    total: float

    def as_dict(self) -> dict:
        out = dict(self.terms)
        out["total"] = self.total
        return out


def _as_2d(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 1:
        return x.unsqueeze(0)
    return x.reshape(x.shape[0], -1)


def cosine_distance_batch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-sample 1 - cos over flattened trailing dims; shape (B,)."""
    av = _as_2d(a)
    bv = _as_2d(b)
    if av.shape != bv.shape:
        raise ShapeMismatch(f"operand shapes differ: {tuple(av.shape)} vs {tuple(bv.shape)}")
    na = av.norm(dim=1)
    nb = bv.norm(dim=1)
    if (na == 0).any() or (nb == 0).any():
        raise ZeroVector("cosine distance undefined for zero vectors")
    return 1.0 - (av * bv).sum(dim=1) / (na * nb)


def identity_loss(z_s: torch.Tensor, z_c: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of 1 - cos(z_s, z_c)."""
    return cosine_distance_batch(z_s, z_c).mean()


def _per_sample_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (a - b).abs()
    return diff.reshape(diff.shape[0], -1).mean(dim=1)


def _same_mask(is_same, reference: torch.Tensor) -> torch.Tensor:
    if isinstance(is_same, bool):
        return torch.full(
            (reference.shape[0],), float(is_same), dtype=reference.dtype, device=reference.device
        )
    mask = torch.as_tensor(is_same, device=reference.device).to(reference.dtype)
    if mask.shape != (reference.shape[0],):
        raise ShapeMismatch(f"same-mask must have shape ({reference.shape[0]},)")
    return mask


def reconstruction_loss(x_t: torch.Tensor, x_c: torch.Tensor, is_same) -> torch.Tensor:
    """Mean absolute pixel difference on same-pairs, exactly 0 elsewhere."""
    if x_t.dim() == 3:
        x_t, x_c = x_t.unsqueeze(0), x_c.unsqueeze(0)
    mask = _same_mask(is_same, x_t)
    if not mask.any():
        return x_t.new_zeros(())
    return (_per_sample_l1(x_t, x_c) * mask).mean()


def perceptual_loss(x_t: torch.Tensor, x_c: torch.Tensor, is_same, adapter) -> torch.Tensor:
    """Sum over taps 0..4 of mean |P_i(x_t) - P_i(x_c)| on same-pairs, else 0."""
    if x_t.dim() == 3:
        x_t, x_c = x_t.unsqueeze(0), x_c.unsqueeze(0)
    mask = _same_mask(is_same, x_t)
    if not mask.any():
        return x_t.new_zeros(())
    taps_t = adapter.taps(x_t)
    taps_c = adapter.taps(x_c)
    if len(taps_t) < 5:
        raise ShapeMismatch(f"perceptual adapter must expose >= 5 taps, got {len(taps_t)}")
    per_sample = torch.stack(
        [_per_sample_l1(t, c) for t, c in zip(taps_t[:5], taps_c[:5])]
    ).sum(dim=0)
    return (per_sample * mask).mean()


def cycle_loss(x_t: torch.Tensor, x_c: torch.Tensor, generator, backbone) -> torch.Tensor:
    """Mean |x_t - G(x_c, I(x_t))|: swap the changed face back to the target."""
    z_t = backbone.embed_batch(x_t)
    x_back = generator(x_c, z_t)
    return _per_sample_l1(x_t, x_back).mean()


def _check_margins(margins: dict) -> list:
    keys = sorted(margins)
    if not keys:
        raise MissingMargin("no margins supplied")
    if keys != list(range(keys[0], keys[-1] + 1)):
        raise MissingMargin(f"margin blocks must be contiguous, got {keys}")
    return keys


def ifsr_loss(
    x_t: torch.Tensor,
    x_c: torch.Tensor,
    backbone,
    margins: dict,
    scale: float,
    literal: bool = False,
) -> torch.Tensor:
    """Feature-similarity regularizer over backbone blocks.

    Per block i, d_i = 1 - cos of flattened features of x_t and x_c. The
    default penalizes only the excess over the scaled margin,
    sum_i max(d_i - m_i*scale, 0). `literal` switches to the non-positive
    variant sum_i min(d_i - m_i*scale, 0), kept for comparison: minimizing
    it drives distances to zero rather than to the margin.
    """
    keys = _check_margins(margins)
    first, last = keys[0], keys[-1]
    feats_t = backbone.feature_batch(x_t, first, last)
    feats_c = backbone.feature_batch(x_c, first, last)
    total = None
    for key, f_t, f_c in zip(keys, feats_t, feats_c):
        d = cosine_distance_batch(f_c, f_t)
        u = d - float(margins[key]) * scale
        term = torch.clamp(u, max=0.0) if literal else torch.clamp(u, min=0.0)
        total = term if total is None else total + term
    return total.mean()


def hinge_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean relu(1 - real) + mean relu(1 + fake); no reward beyond the margin."""
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


def gradient_penalty(
    critic,
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: torch.Generator | None = None,
    mode: str = "interpolated",
) -> torch.Tensor:
    """Critic input-gradient regularizer.

    interpolated: mean((||grad critic(x_hat)|| - 1)^2) at per-sample random
    convex combinations of real and fake. real-only: zero-centred squared
    gradient norm at the real samples.
    """
    if real.shape != fake.shape:
        raise ShapeMismatch(f"batch shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
    if mode == "interpolated":
        shape = (real.shape[0],) + (1,) * (real.dim() - 1)
        u = torch.rand(shape, generator=rng, dtype=real.dtype, device=real.device)
        x_hat = (u * real + (1.0 - u) * fake).detach().requires_grad_(True)
    elif mode == "real-only":
        x_hat = real.detach().requires_grad_(True)
    else:
        raise ValueError(f"unknown gradient penalty mode {mode!r}")
    scores = critic(x_hat)
    if scores.requires_grad:
        grads = torch.autograd.grad(
            scores.sum(), x_hat, create_graph=True, retain_graph=True, allow_unused=True
        )[0]
    else:
        grads = None
    if grads is None:
        # a critic that ignores its input has zero gradient everywhere
        grads = torch.zeros_like(x_hat)
    norms = grads.reshape(grads.shape[0], -1).norm(dim=1)
    if mode == "real-only":
        return (norms ** 2).mean()
    return ((norms - 1.0) ** 2).mean()


GENERATOR_TERM_WEIGHTS = {
    "adv": "lambda_adv",  # 1 in the canonical total; 0 disables adversarial training
    "identity": "lambda_i",
    "reconstruction": "lambda_r",
    "perceptual": "lambda_p",
    "cycle": "lambda_c",
    "ifsr": "lambda_ifsr",
}


def combine_generator_terms(terms: dict, weights: LossWeights):
    """Weighted sum of generator terms; stays a tensor if the terms are tensors."""
    total = None
    for name, value in terms.items():
        if name not in GENERATOR_TERM_WEIGHTS:
            raise KeyError(f"unknown generator loss term {name!r}")
        weighted = getattr(weights, GENERATOR_TERM_WEIGHTS[name]) * value
        total = weighted if total is None else total + weighted
    if total is None:
        raise ValueError("no loss terms supplied")
    return total


def total_generator_loss(terms: dict, weights: LossWeights) -> LossReport:
    """Snapshot report: per-term floats plus the weighted total."""
    total = combine_generator_terms(terms, weights)
    scalars = {
        name: float(value.detach()) if torch.is_tensor(value) else float(value)
        for name, value in terms.items()
    }
    return LossReport(terms=scalars, total=float(total.detach()) if torch.is_tensor(total) else float(total))
