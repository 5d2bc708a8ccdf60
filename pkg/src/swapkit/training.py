"""Alternating adversarial training loop with deterministic resumption.

One critic update then one generator update per step, Adam with the decayed
learning-rate staircase, JSON-lines loss logging, and atomic checkpoints
carrying weights, optimizer moments, and both RNG states.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .alignment import AlignedFace
from .backbones import BackboneAdapter, backbone_id, face_tensor
from .calibration import IFSRMargins
from .config import ModelConfig, RunSettings, TrainSettings
from .discriminator import Discriminator
from .errors import (
    CheckpointCorrupt,
    CheckpointNotFound,
    ConfigMismatch,
    MissingMargin,
    NoData,
    NonFiniteLoss,
)
from .generator import Generator
from .losses import (
    LossReport,
    LossWeights,
    combine_generator_terms,
    cycle_loss,
    gradient_penalty,
    hinge_d_loss,
    hinge_g_loss,
    identity_loss,
    ifsr_loss,
    perceptual_loss,
    reconstruction_loss,
)
from .pipeline import AugmentConfig, FaceStore, faces_to_array, sample_batch

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class OptimizerSpec:
    lr0: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    decay: float = 0.97
    decay_every: int = 100000
    decay_mode: str = "staircase"

    @classmethod
    def from_settings(cls, s: TrainSettings) -> "OptimizerSpec":
        return cls(
            lr0=s.lr0,
            beta1=s.beta1,
            beta2=s.beta2,
            decay=s.decay,
            decay_every=s.decay_every,
            decay_mode=s.decay_mode,
        )


def lr_at(step: int, spec: OptimizerSpec) -> float:
    """Decayed learning rate; the default staircase drops at exact multiples."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if spec.decay_mode == "staircase":
        return spec.lr0 * spec.decay ** (step // spec.decay_every)
    return spec.lr0 * spec.decay ** (step / spec.decay_every)


def weights_from_settings(s: TrainSettings) -> LossWeights:
    return LossWeights(
        lambda_adv=s.lambda_adv,
        lambda_i=s.lambda_i,
        lambda_r=s.lambda_r,
        lambda_p=s.lambda_p,
        lambda_c=s.lambda_c,
        lambda_ifsr=s.lambda_ifsr,
        lambda_gp=s.lambda_gp,
    )


def augment_from_settings(s: TrainSettings) -> AugmentConfig:
    return AugmentConfig(
        brightness=s.augment_brightness,
        contrast=(s.augment_contrast_lo, s.augment_contrast_hi),
        saturation=(s.augment_saturation_lo, s.augment_saturation_hi),
        enabled=s.augment_enabled,
    )


class Trainer:
    """Owns all mutable training state; everything else stays frozen."""

    def __init__(
        self,
        run: RunSettings,
        store: FaceStore,
        backbone: BackboneAdapter,
        perceptual,
        margins: IFSRMargins | None = None,
    ):
        run.validate()
        self.run = run
        self.store = store
        self.backbone = backbone
        self.perceptual = perceptual
        if run.model.use_ifsr and run.train.lambda_ifsr > 0 and margins is None:
            raise MissingMargin(
                "this model trains with the feature-similarity regularizer; load a margins file first"
            )
        self.margins = margins
        if run.train.deterministic:
            torch.use_deterministic_algorithms(True)

        seed = run.train.seed
        self.generator = Generator(run.model, seed=seed + 2)
        self.discriminator = Discriminator(run.model, seed=seed + 3)
        self.spec = OptimizerSpec.from_settings(run.train)
        self.weights = weights_from_settings(run.train)
        self.augment_config = augment_from_settings(run.train)
        self.g_opt = torch.optim.Adam(
            self.generator.parameters(),
            lr=self.spec.lr0,
            betas=(self.spec.beta1, self.spec.beta2),
        )
        self.d_opt = torch.optim.Adam(
            self.discriminator.parameters(),
            lr=self.spec.lr0,
            betas=(self.spec.beta1, self.spec.beta2),
        )
        self.np_rng = np.random.default_rng(seed)
        self.torch_rng = torch.Generator().manual_seed(seed + 1)
        self.step = 0

    def _set_lr(self):
        lr = lr_at(self.step, self.spec)
        for opt in (self.g_opt, self.d_opt):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    def next_batch(self):
        return sample_batch(
            self.store,
            self.run.train.batch_size,
            self.run.train.same_prob,
            self.np_rng,
            self.augment_config,
        )

    def train_step(self, batch=None) -> LossReport:
        if batch is None:
            batch = self.next_batch()
        lr = self._set_lr()
        s = self.run.train

        x_t = torch.from_numpy(faces_to_array([p.target for p in batch]))
        x_s = torch.from_numpy(faces_to_array([p.source for p in batch]))
        same = torch.tensor([p.is_same for p in batch], dtype=x_t.dtype)

        with torch.no_grad():
            z_s = self.backbone.embed_batch(x_s)
        x_c = self.generator(x_t, z_s)

        terms = {}
        adversarial = s.lambda_adv > 0
        if adversarial:
            real_scores = self.discriminator(x_t)
            fake_scores_d = self.discriminator(x_c.detach())
            d_hinge = hinge_d_loss(real_scores, fake_scores_d)
            d_gp = gradient_penalty(
                self.discriminator,
                x_t,
                x_c.detach(),
                rng=self.torch_rng,
                mode=s.gp_mode,
            )
            d_total = d_hinge + self.weights.lambda_gp * d_gp
            self._check_finite({"d_hinge": d_hinge, "d_gp": d_gp}, d_total)
            self.d_opt.zero_grad(set_to_none=True)
            d_total.backward()
            self.d_opt.step()
            terms["d_hinge"] = float(d_hinge.detach())
            terms["d_gp"] = float(d_gp.detach())

        g_terms = {}
        if adversarial:
            g_terms["adv"] = hinge_g_loss(self.discriminator(x_c))
        if s.lambda_i > 0:
            g_terms["identity"] = identity_loss(z_s, self.backbone.embed_batch(x_c))
        if s.lambda_r > 0:
            g_terms["reconstruction"] = reconstruction_loss(x_t, x_c, same)
        if s.lambda_p > 0:
            g_terms["perceptual"] = perceptual_loss(x_t, x_c, same, self.perceptual)
        if s.lambda_c > 0:
            g_terms["cycle"] = cycle_loss(x_t, x_c, self.generator, self.backbone)
        if self.run.model.use_ifsr and s.lambda_ifsr > 0:
            g_terms["ifsr"] = ifsr_loss(
                x_t,
                x_c,
                self.backbone,
                self.margins.margins,
                s.ifsr_scale,
                literal=s.ifsr_literal,
            )
        g_total = combine_generator_terms(g_terms, self.weights)
        self._check_finite(g_terms, g_total)
        self.g_opt.zero_grad(set_to_none=True)
        g_total.backward()
        self.g_opt.step()

        self.step += 1
        scalars = {k: float(v.detach()) for k, v in g_terms.items()}
        scalars.update({k: v for k, v in terms.items()})
        scalars["lr"] = lr
        return LossReport(terms=scalars, total=float(g_total.detach()))

    def _check_finite(self, terms: dict, total):
        if not torch.isfinite(total if torch.is_tensor(total) else torch.tensor(total)):
            dump = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in terms.items()}
            raise NonFiniteLoss("training loss is not finite", terms=dump)

    def export_attention(self, path):
        """Save the gating masks captured on the latest generator forward."""
        masks = self.generator.attention_masks()
        if not masks:
            return False
        np.savez(
            path, **{f"res{r}": m.numpy().astype(np.float32) for r, m in masks.items()}
        )
        return True

    def save_checkpoint(self, path):
        blob = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "step": self.step,
            "model_config": asdict(self.run.model),
            "train_settings": asdict(self.run.train),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "g_opt": self.g_opt.state_dict(),
            "d_opt": self.d_opt.state_dict(),
            "np_rng": self.np_rng.bit_generator.state,
            "torch_rng": self.torch_rng.get_state(),
            "margins": None
            if self.margins is None
            else {
                "margins": self.margins.margins,
                "sample_count": self.margins.sample_count,
                "swap_model_id": self.margins.swap_model_id,
                "backbone_id": self.margins.backbone_id,
            },
            "backbone_id": backbone_id(self.backbone),
        }
        tmp = f"{path}.tmp"
        torch.save(blob, tmp)
        os.replace(tmp, path)

    @classmethod
    def load_checkpoint(
        cls,
        path,
        store: FaceStore,
        backbone: BackboneAdapter,
        perceptual,
        check_backbone: bool = True,
    ) -> "Trainer":
        blob = read_checkpoint_blob(path)
        model = ModelConfig(**blob["model_config"])
        train = TrainSettings(**blob["train_settings"])
        margins = None
        if blob["margins"] is not None:
            margins = IFSRMargins(**blob["margins"]).validate()
        if check_backbone and blob["backbone_id"] != backbone_id(backbone):
            raise ConfigMismatch(
                f"checkpoint was trained against {blob['backbone_id']}, got {backbone_id(backbone)}"
            )
        trainer = cls(
            RunSettings(model=model, train=train),
            store,
            backbone,
            perceptual,
            margins=margins,
        )
        trainer.generator.load_state_dict(blob["generator"])
        trainer.discriminator.load_state_dict(blob["discriminator"])
        trainer.g_opt.load_state_dict(blob["g_opt"])
        trainer.d_opt.load_state_dict(blob["d_opt"])
        trainer.np_rng.bit_generator.state = blob["np_rng"]
        trainer.torch_rng.set_state(blob["torch_rng"])
        trainer.step = blob["step"]
        return trainer


def read_checkpoint_blob(path) -> dict:
    if not os.path.exists(path):
        raise CheckpointNotFound(f"no checkpoint at {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointCorrupt(f"{path}: unrecognized checkpoint format")
    return blob


def load_generator(path) -> tuple:
    """Generator weights plus config from a checkpoint, for inference."""
    blob = read_checkpoint_blob(path)
    model = ModelConfig(**blob["model_config"])
    gen = Generator(model)
    gen.load_state_dict(blob["generator"])
    gen.eval()
    return gen, model, blob


@torch.no_grad()
def swap_faces(
    generator: Generator,
    backbone: BackboneAdapter,
    target: AlignedFace,
    source: AlignedFace,
) -> AlignedFace:
    """X_c = G(target, identity(source)); output carries the source identity label."""
    z = backbone.embed_batch(face_tensor(source))
    x_c = generator(face_tensor(target), z)
    pixels = x_c[0].permute(1, 2, 0).numpy().astype(np.float32)
    return AlignedFace(
        pixels=np.clip(pixels, -1.0, 1.0),
        resolution=target.resolution,
        source_id=source.source_id,
    )


class CheckpointSwapper:
    """Calibration-facing swap model backed by a trained generator."""

    def __init__(self, generator: Generator, backbone: BackboneAdapter, model_id: str = ""):
        self.generator = generator
        self.backbone = backbone
        self.model_id = model_id or f"generator(res={generator.config.resolution})"

    def __call__(self, target: AlignedFace, source: AlignedFace) -> AlignedFace:
        return swap_faces(self.generator, self.backbone, target, source)


class MetricsLog:
    """Append-only JSON-lines loss stream."""

    def __init__(self, path):
        self.path = path

    def append(self, step: int, report: LossReport):
        row = {"step": step}
        row.update(report.terms)
        row["total"] = report.total
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics_log(path) -> list:
    rows = []
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    if not rows:
        raise NoData(f"metrics log {path} is empty")
    return rows


def run_training(
    trainer: Trainer,
    steps: int,
    log: MetricsLog | None = None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    attention_dir=None,
    fixed_batch=None,
) -> list:
    """Drive train_step for `steps` iterations; returns the loss reports."""
    reports = []
    for _ in range(steps):
        report = trainer.train_step(batch=fixed_batch)
        reports.append(report)
        if log is not None:
            log.append(trainer.step, report)
        due = checkpoint_every and trainer.step % checkpoint_every == 0
        if checkpoint_path is not None and (due or trainer.step == steps):
            trainer.save_checkpoint(checkpoint_path)
            if attention_dir is not None:
                trainer.export_attention(
                    os.path.join(attention_dir, f"attention_{trainer.step:07d}.npz")
                )
    if checkpoint_path is not None:
        trainer.save_checkpoint(checkpoint_path)
    return reports
