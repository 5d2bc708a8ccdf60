"""Face swapping toolkit: aligned-face pipeline, conditional generator with
attentional feature fusion, feature-similarity regularization with a
calibration path, and an evaluation suite."""

from .alignment import (
    AlignedFace,
    LandmarkSet,
    align_face,
    estimate_similarity_transform,
    resize_face,
    warp_affine,
)
from .backbones import (
    BackboneAdapter,
    IdentityEmbedding,
    ResNetBackbone,
    StubBackbone,
    backbone_id,
    cosine_distance,
    load_backbone,
    save_backbone,
)
from .calibration import (
    DistanceSample,
    IFSRMargins,
    collect_distances,
    compute_eer,
    derive_margins,
    eer_curve,
    emit_report,
    read_margins,
    write_margins,
)
from .config import (
    ModelConfig,
    PRESET_NAMES,
    RunSettings,
    TrainSettings,
    desk_preset,
    load_run_settings,
    make_preset,
    show_model_config,
)
from .discriminator import Discriminator
from .errors import SwapkitError
from .generator import AFFAGate, Generator, MappingNetwork, affa_blend
from .losses import (
    LossReport,
    LossWeights,
    combine_generator_terms,
    cosine_distance_batch,
    cycle_loss,
    gradient_penalty,
    hinge_d_loss,
    hinge_g_loss,
    identity_loss,
    ifsr_loss,
    perceptual_loss,
    reconstruction_loss,
    total_generator_loss,
)
from .metrics import (
    EvalAdapters,
    MetricReport,
    evaluate,
    frechet_distance,
    gaussian_stats,
    identity_retrieval,
    sqrtm_psd,
)
from .perceptual import SeededPerceptual
from .pipeline import AugmentConfig, FaceStore, TrainingPair, augment, sample_batch
from .synthetic import synthetic_face, synthetic_store, write_synthetic_dataset
from .training import (
    MetricsLog,
    Trainer,
    load_generator,
    lr_at,
    run_training,
    swap_faces,
)

__version__ = "0.1.0"

__all__ = [
    "AFFAGate",
    "AlignedFace",
    "AugmentConfig",
    "BackboneAdapter",
    "Discriminator",
    "DistanceSample",
    "EvalAdapters",
    "FaceStore",
    "Generator",
    "IFSRMargins",
    "IdentityEmbedding",
    "LandmarkSet",
    "LossReport",
    "LossWeights",
    "MappingNetwork",
    "MetricReport",
    "MetricsLog",
    "ModelConfig",
    "PRESET_NAMES",
    "ResNetBackbone",
    "RunSettings",
    "SeededPerceptual",
    "StubBackbone",
    "SwapkitError",
    "Trainer",
    "TrainSettings",
    "TrainingPair",
    "affa_blend",
    "align_face",
    "augment",
    "backbone_id",
    "collect_distances",
    "combine_generator_terms",
    "compute_eer",
    "cosine_distance",
    "cosine_distance_batch",
    "cycle_loss",
    "derive_margins",
    "desk_preset",
    "eer_curve",
    "emit_report",
    "estimate_similarity_transform",
    "evaluate",
    "frechet_distance",
    "gaussian_stats",
    "gradient_penalty",
    "hinge_d_loss",
    "hinge_g_loss",
    "identity_loss",
    "identity_retrieval",
    "ifsr_loss",
    "load_backbone",
    "load_generator",
    "load_run_settings",
    "lr_at",
    "make_preset",
    "perceptual_loss",
    "read_margins",
    "reconstruction_loss",
    "resize_face",
    "run_training",
    "sample_batch",
    "save_backbone",
    "show_model_config",
    "sqrtm_psd",
    "swap_faces",
    "synthetic_face",
    "synthetic_store",
    "total_generator_loss",
    "warp_affine",
    "write_margins",
    "write_synthetic_dataset",
]
