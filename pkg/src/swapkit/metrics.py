"""Evaluation metrics: identity retrieval, pose/expression L2, and the
Frechet distance between deep-feature Gaussians.

Estimators are pluggable adapters; a metric whose adapter is missing is
reported as absent, never as zero. Frechet values are only comparable
within one feature extractor, so reports record the extractor id.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .alignment import AlignedFace
from .backbones import BackboneAdapter
from .errors import EmptyGallery, NonPSDCovariance, ShapeMismatch
from .pipeline import FaceStore, faces_to_array

REPORT_SCHEMA_VERSION = 1
PSD_TOL = 1e-6
SQRT_RESIDUAL_TOL = 1e-7
NEWTON_SCHULZ_ITERS = 100


@dataclass
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise ShapeMismatch(f"covariance {cov.shape} does not match mean dim {mean.size}")
        if np.abs(cov - cov.T).max() > 1e-8 * max(1.0, np.abs(cov).max()):
            raise NonPSDCovariance("covariance is not symmetric within tolerance")
        self.mean = mean
        self.covariance = (cov + cov.T) / 2.0


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and covariance (1/(N-1) normalization) of N x d features."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[0] < 2:
        raise ShapeMismatch("need at least 2 samples for covariance")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (feats.shape[0] - 1)
    return GaussianStats(mean=mean, covariance=cov)


def _check_psd(cov: np.ndarray, label: str) -> np.ndarray:
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals.min() < -PSD_TOL * max(1.0, abs(eigvals.max())):
        raise NonPSDCovariance(
            f"{label} covariance has eigenvalue {eigvals.min():.3e} below -{PSD_TOL}"
        )
    return cov


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix.

    Newton-Schulz iteration on the Frobenius-normalized matrix, with an
    eigendecomposition fallback when the iterate's residual stays large.
    """
    a = np.asarray(mat, dtype=np.float64)
    a = (a + a.T) / 2.0
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros_like(a)
    y = a / norm
    z = np.eye(a.shape[0])
    eye3 = 3.0 * np.eye(a.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(NEWTON_SCHULZ_ITERS):
            t = 0.5 * (eye3 - z @ y)
            y = y @ t
            z = t @ z
            if not np.isfinite(y).all():
                break
        root = y * np.sqrt(norm)
        residual = np.linalg.norm(root @ root - a) / norm
    if not np.isfinite(residual) or residual > SQRT_RESIDUAL_TOL:
        eigvals, eigvecs = np.linalg.eigh(a)
        root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return (root + root.T) / 2.0


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^(1/2)).

    The cross term is computed as Tr(sqrt(S_p^(1/2) S_q S_p^(1/2))), which is
    symmetric and PSD; tiny negative round-off in the result is clamped to 0.
    """
    if p.mean.size != q.mean.size:
        raise ShapeMismatch(f"dimension mismatch: {p.mean.size} vs {q.mean.size}")
    cov_p = _check_psd(p.covariance, "first")
    cov_q = _check_psd(q.covariance, "second")
    root_p = sqrtm_psd(cov_p)
    inner = root_p @ cov_q @ root_p
    cross = np.trace(sqrtm_psd(inner))
    mean_term = float(((p.mean - q.mean) ** 2).sum())
    value = mean_term + float(np.trace(cov_p) + np.trace(cov_q) - 2.0 * cross)
    if value < 0.0:
        if value < -1e-6 * max(1.0, abs(mean_term)):
            raise NonPSDCovariance(f"distance collapsed to {value}, inputs are ill-conditioned")
        value = 0.0
    return value


def retrieval_fraction(
    query_vectors: np.ndarray,
    query_ids,
    gallery_vectors: np.ndarray,
    gallery_ids,
) -> float:
    """Fraction of queries whose max-cosine gallery neighbour has the true id."""
    gal = np.asarray(gallery_vectors, dtype=np.float64)
    if gal.size == 0 or len(gallery_ids) == 0:
        raise EmptyGallery("gallery has no embeddings")
    if gal.shape[0] != len(gallery_ids):
        raise ShapeMismatch("gallery vectors and ids differ in length")
    qry = np.asarray(query_vectors, dtype=np.float64)
    if qry.shape[0] != len(query_ids):
        raise ShapeMismatch("query vectors and ids differ in length")
    gal_n = gal / np.linalg.norm(gal, axis=1, keepdims=True)
    qry_n = qry / np.linalg.norm(qry, axis=1, keepdims=True)
    nearest = np.argmax(qry_n @ gal_n.T, axis=1)
    gallery_ids = list(gallery_ids)
    hits = sum(1 for i, j in enumerate(nearest) if gallery_ids[j] == query_ids[i])
    return hits / len(query_ids)


def identity_retrieval(swapped, gallery, encoder: BackboneAdapter) -> float:
    """Swapped faces are matched to the gallery by the secondary encoder.

    `swapped` faces carry their true source identity in source_id; `gallery`
    holds one face per identity.
    """
    gallery = list(gallery)
    if not gallery:
        raise EmptyGallery("gallery has no faces")
    ids = [f.source_id for f in gallery]
    if len(set(ids)) != len(ids):
        raise ShapeMismatch("gallery must contain one face per identity")
    gal_vecs = np.stack([encoder.embed(f).vector for f in gallery])
    qry_vecs = np.stack([encoder.embed(f).vector for f in swapped])
    return retrieval_fraction(qry_vecs, [f.source_id for f in swapped], gal_vecs, ids)


def pairwise_l2_metric(a_estimates, b_estimates) -> float:
    """Mean Euclidean distance between paired estimate vectors."""
    a = np.asarray(a_estimates, dtype=np.float64)
    b = np.asarray(b_estimates, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[None, :], b[None, :]
    if a.shape != b.shape:
        raise ShapeMismatch(f"estimate lists differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=1).mean())


class SeededEstimator:
    """Deterministic pseudo pose/expression estimator.

    Projects an 8x8 gray thumbnail of the face through a fixed seeded matrix.
    Stands in for third-party estimators so the harness runs offline.
    """

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.matrix = rng.standard_normal((dim, 64)) / 8.0

    def estimate(self, face: AlignedFace) -> np.ndarray:
        gray = face.pixels.astype(np.float64).mean(axis=2)
        h, w = gray.shape
        ys = (np.arange(8) * h) // 8
        xs = (np.arange(8) * w) // 8
        thumb = gray[np.ix_(ys, xs)].reshape(-1)
        return self.matrix @ thumb

    def estimate_batch(self, faces) -> np.ndarray:
        return np.stack([self.estimate(f) for f in faces])

    @property
    def estimator_id(self) -> str:
        return f"SeededEstimator(dim={self.dim},seed={self.seed})"


class PerceptualFeatureExtractor:
    """Distribution-metric features: the perceptual stub's deepest tap, pooled."""

    def __init__(self, perceptual):
        self.perceptual = perceptual

    @torch.no_grad()
    def features(self, faces) -> np.ndarray:
        batch = torch.from_numpy(faces_to_array(faces))
        return self.perceptual.deep_features(batch).double().numpy()

    @property
    def extractor_id(self) -> str:
        return getattr(self.perceptual, "extractor_id", type(self.perceptual).__name__)


@dataclass
class EvalAdapters:
    encoder: BackboneAdapter | None = None
    pose: SeededEstimator | None = None
    expression: SeededEstimator | None = None
    fid_extractor: PerceptualFeatureExtractor | None = None


@dataclass
class MetricReport:
    n_images: int
    id_retrieval: float | None = None
    pose_l2: float | None = None
    expression_l2: float | None = None
    fid: float | None = None
    fid_extractor: str | None = None

    def as_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_images": self.n_images,
            "id_retrieval": self.id_retrieval,
            "pose_l2": self.pose_l2,
            "expression_l2": self.expression_l2,
            "fid": self.fid,
            "fid_extractor": self.fid_extractor,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "MetricReport":
        if blob.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError("unrecognized metric report schema")
        return cls(
            n_images=blob["n_images"],
            id_retrieval=blob.get("id_retrieval"),
            pose_l2=blob.get("pose_l2"),
            expression_l2=blob.get("expression_l2"),
            fid=blob.get("fid"),
            fid_extractor=blob.get("fid_extractor"),
        )


def _store_faces(store: FaceStore) -> list:
    return [store.load(i) for i in range(len(store))]


def evaluate(
    swapped_store: FaceStore,
    reference_store: FaceStore,
    adapters: EvalAdapters,
    gallery_store: FaceStore | None = None,
) -> MetricReport:
    """Run every metric whose adapter is present.

    Pose and expression compare swapped faces to their index-aligned
    reference counterparts; identity retrieval matches swapped faces (whose
    store labels are the true source identities) against the gallery.
    """
    swapped = _store_faces(swapped_store)
    reference = _store_faces(reference_store)
    report = MetricReport(n_images=len(swapped))

    if adapters.pose is not None or adapters.expression is not None:
        if len(swapped) != len(reference):
            raise ShapeMismatch(
                f"paired metrics need equal counts, got {len(swapped)} vs {len(reference)}"
            )
    if adapters.pose is not None:
        report.pose_l2 = pairwise_l2_metric(
            adapters.pose.estimate_batch(reference), adapters.pose.estimate_batch(swapped)
        )
    if adapters.expression is not None:
        report.expression_l2 = pairwise_l2_metric(
            adapters.expression.estimate_batch(reference),
            adapters.expression.estimate_batch(swapped),
        )
    if adapters.fid_extractor is not None:
        stats_ref = gaussian_stats(adapters.fid_extractor.features(reference))
        stats_swp = gaussian_stats(adapters.fid_extractor.features(swapped))
        report.fid = frechet_distance(stats_ref, stats_swp)
        report.fid_extractor = adapters.fid_extractor.extractor_id
    if adapters.encoder is not None and gallery_store is not None:
        gallery = []
        seen = set()
        for i in range(len(gallery_store)):
            face = gallery_store.load(i)
            if face.source_id not in seen:
                seen.add(face.source_id)
                gallery.append(face)
        report.id_retrieval = identity_retrieval(swapped, gallery, adapters.encoder)
    return report


def write_report(report: MetricReport, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_report(path) -> MetricReport:
    with open(path, "r", encoding="utf-8") as fh:
        return MetricReport.from_dict(json.load(fh))
