"""Margin calibration for the feature-similarity regularizer.

Runs random swaps over a face store, collects per-block cosine distances
between changed/target (c2t), changed/source (c2s), and impostor pairs,
derives per-block margins from the c2t means, and locates where the
backbone's blocks stop being attribute-dominated via equal error rates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .backbones import BackboneAdapter, backbone_id, cosine_distance
from .errors import (
    EmptyBlock,
    EmptyDistribution,
    InsufficientIdentities,
    ShapeMismatch,
)
from .pipeline import FaceStore

REPORT_FORMAT_VERSION = 1
HIST_BINS = 50
HIST_RANGE = (0.0, 2.0)


@dataclass(frozen=True)
class DistanceSample:
    block_index: int
    c2t: float
    c2s: float
    neg: float

    def __post_init__(self):
        for name in ("c2t", "c2s", "neg"):
            v = getattr(self, name)
            if not (0.0 <= v <= 2.0):
                raise ShapeMismatch(f"{name} distance {v} outside [0, 2]")


@dataclass
class IFSRMargins:
    margins: dict  # block_index -> margin
    sample_count: int
    swap_model_id: str = ""
    backbone_id: str = ""

    def validate(self):
        keys = sorted(self.margins)
        if not keys:
            raise EmptyBlock("margins cover no blocks")
        if keys != list(range(keys[0], keys[-1] + 1)):
            raise EmptyBlock(f"margin block range must be contiguous, got {keys}")
        for k, m in self.margins.items():
            if not (0.0 <= m <= 2.0):
                raise ShapeMismatch(f"margin {m} at block {k} outside [0, 2]")
        return self

    @property
    def first(self) -> int:
        return min(self.margins)

    @property
    def last(self) -> int:
        return max(self.margins)


def identity_pass_through(target, source):
    """Swap model stub: the changed face is the target."""
    return target


def source_pass_through(target, source):
    """Swap model stub: the changed face is the source."""
    return source


def collect_distances(
    swap_model,
    backbone: BackboneAdapter,
    store: FaceStore,
    n_triplets: int,
    rng: np.random.Generator,
    first: int = 2,
    last: int | None = None,
) -> list:
    """Per sampled triplet and block, record c2t, c2s, and impostor distances.

    swap_model is any callable (target, source) -> changed over AlignedFaces.
    """
    if n_triplets < 1:
        raise ValueError("n_triplets must be >= 1")
    idents = store.identities
    if len(idents) < 3:
        raise InsufficientIdentities(
            f"calibration needs >= 3 identities, store has {len(idents)}"
        )
    if last is None:
        last = backbone.block_count
    last = min(last, backbone.block_count)

    samples = []
    for _ in range(n_triplets):
        t_idx = int(rng.integers(len(store)))
        t_ident = store.identity_of(t_idx)
        s_pool = store.indices_excluding(t_ident)
        s_idx = s_pool[int(rng.integers(len(s_pool)))]
        a_idx = int(rng.integers(len(store)))
        b_pool = store.indices_excluding(store.identity_of(a_idx))
        b_idx = b_pool[int(rng.integers(len(b_pool)))]

        target = store.load(t_idx)
        source = store.load(s_idx)
        changed = swap_model(target, source)
        f_c = backbone.intermediate_features(changed, first, last)
        f_t = backbone.intermediate_features(target, first, last)
        f_s = backbone.intermediate_features(source, first, last)
        f_a = backbone.intermediate_features(store.load(a_idx), first, last)
        f_b = backbone.intermediate_features(store.load(b_idx), first, last)
        for offset, block in enumerate(range(first, last + 1)):
            samples.append(
                DistanceSample(
                    block_index=block,
                    c2t=_clip_distance(cosine_distance(f_c.blocks[offset], f_t.blocks[offset])),
                    c2s=_clip_distance(cosine_distance(f_c.blocks[offset], f_s.blocks[offset])),
                    neg=_clip_distance(cosine_distance(f_a.blocks[offset], f_b.blocks[offset])),
                )
            )
    return samples


def _clip_distance(d: float) -> float:
    # round-off guard; cosine distances live in [0, 2]
    return min(max(d, 0.0), 2.0)


def group_by_block(samples) -> dict:
    out = {}
    for s in samples:
        out.setdefault(s.block_index, []).append(s)
    return out


def derive_margins(samples, statistic: str = "mean", **meta) -> IFSRMargins:
    """Per-block margin = mean of the c2t distances at that block."""
    if statistic != "mean":
        raise ValueError(f"unsupported margin statistic {statistic!r}")
    grouped = group_by_block(samples)
    if not grouped:
        raise EmptyBlock("no distance samples supplied")
    margins = {}
    counts = set()
    for block, rows in grouped.items():
        if not rows:
            raise EmptyBlock(f"block {block} has no samples")
        margins[block] = float(np.mean([r.c2t for r in rows]))
        counts.add(len(rows))
    n = max(counts)
    return IFSRMargins(margins=margins, sample_count=n, **meta).validate()


def compute_eer(genuine, impostor) -> float:
    """Equal error rate of a low-is-genuine distance threshold rule.

    FAR(t) = fraction of impostor scores below t; FRR(t) = fraction of
    genuine scores at or above t. Both are swept over the merged sample
    values (with sentinels) and the crossing of FAR - FRR is linearly
    interpolated between the two adjacent operating points. Reversed
    distributions legitimately yield values above 0.5.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64).reshape(-1))
    m = np.sort(np.asarray(impostor, dtype=np.float64).reshape(-1))
    if g.size == 0 or m.size == 0:
        raise EmptyDistribution("both genuine and impostor lists must be non-empty")
    vals = np.unique(np.concatenate([g, m]))
    thresholds = np.concatenate([[vals[0] - 1.0], vals, [vals[-1] + 1.0]])
    far = np.searchsorted(m, thresholds, side="left") / m.size
    frr = 1.0 - np.searchsorted(g, thresholds, side="left") / g.size
    diff = far - frr
    idx = int(np.argmax(diff >= 0.0))  # diff[0] is -1 by construction
    lo, hi = idx - 1, idx
    denom = diff[hi] - diff[lo]
    if denom == 0.0:
        return float(far[hi])
    alpha = -diff[lo] / denom
    return float(far[lo] + alpha * (far[hi] - far[lo]))


def eer_curve(samples) -> dict:
    """Per-block EER with c2t as the genuine class and c2s as the impostor class."""
    grouped = group_by_block(samples)
    out = {}
    for block in sorted(grouped):
        rows = grouped[block]
        out[block] = compute_eer([r.c2t for r in rows], [r.c2s for r in rows])
    return out


def write_margins(margins: IFSRMargins, path):
    margins.validate()
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("# ifsr margins\n")
        fh.write(f"# swap_model_id: {margins.swap_model_id}\n")
        fh.write(f"# backbone_id: {margins.backbone_id}\n")
        fh.write("# statistic: mean_c2t\n")
        fh.write("block_index\tmargin\tn_samples\n")
        for block in sorted(margins.margins):
            fh.write(f"{block}\t{margins.margins[block]!r}\t{margins.sample_count}\n")
    os.replace(tmp, path)


def read_margins(path) -> IFSRMargins:
    margins = {}
    sample_count = 0
    swap_model_id = ""
    bb_id = ""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# swap_model_id:"):
                swap_model_id = line.split(":", 1)[1].strip()
            elif line.startswith("# backbone_id:"):
                bb_id = line.split(":", 1)[1].strip()
            elif line.startswith("#") or not line.strip():
                continue
            elif line.startswith("block_index"):
                continue
            else:
                block, margin, n = line.split("\t")
                margins[int(block)] = float(margin)
                sample_count = max(sample_count, int(n))
    return IFSRMargins(
        margins=margins,
        sample_count=sample_count,
        swap_model_id=swap_model_id,
        backbone_id=bb_id,
    ).validate()


def _histogram(values) -> list:
    counts, _ = np.histogram(values, bins=HIST_BINS, range=HIST_RANGE)
    return counts.tolist()


def emit_report(samples, margins: IFSRMargins, eers: dict, path):
    """Write the calibration report: per-block histograms, means, and EERs."""
    grouped = group_by_block(samples)
    blocks = []
    for block in sorted(grouped):
        rows = grouped[block]
        c2t = [r.c2t for r in rows]
        c2s = [r.c2s for r in rows]
        neg = [r.neg for r in rows]
        blocks.append(
            {
                "block_index": block,
                "margin": margins.margins.get(block),
                "eer": eers.get(block),
                "n_samples": len(rows),
                "c2t_mean": float(np.mean(c2t)),
                "c2s_mean": float(np.mean(c2s)),
                "neg_mean": float(np.mean(neg)),
                "c2t_hist": _histogram(c2t),
                "c2s_hist": _histogram(c2s),
                "neg_hist": _histogram(neg),
            }
        )
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "swap_model_id": margins.swap_model_id,
        "backbone_id": margins.backbone_id,
        "sample_count": margins.sample_count,
        "hist_bins": HIST_BINS,
        "hist_range": list(HIST_RANGE),
        "blocks": blocks,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return report


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    if report.get("format_version") != REPORT_FORMAT_VERSION:
        raise ValueError(f"{path}: unrecognized calibration report version")
    return report
