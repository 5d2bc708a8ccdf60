"""Training data plumbing: face stores, photometric augmentation, pair sampling.

Batches are lists of (target, source) pairs where a configurable fraction of
pairs reuse the same image on both sides; those same-pairs are what the
reconstruction and perceptual objectives train on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignedFace, align_face, read_landmarks, resize_face
from .errors import EmptyDataset, InsufficientIdentities

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".npy")

# Rec. 601 luma weights, used as the desaturation target.
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class TrainingPair:
    target: AlignedFace  # attributes to keep
    source: AlignedFace  # identity to inject
    is_same: bool

    def __post_init__(self):
        if self.is_same and not np.array_equal(self.target.pixels, self.source.pixels):
            raise ValueError("is_same pairs must be pixel-identical")


@dataclass
class AugmentConfig:
    """Photometric jitter ranges. Neutral values (0 shift, x1 gain) disable an op."""

    brightness: float = 0.2
    contrast: tuple = (0.8, 1.25)
    saturation: tuple = (0.8, 1.25)
    enabled: bool = True

    def is_neutral(self) -> bool:
        return (
            not self.enabled
            or (
                self.brightness == 0.0
                and self.contrast == (1.0, 1.0)
                and self.saturation == (1.0, 1.0)
            )
        )


def apply_photometric(
    pixels: np.ndarray,
    brightness_delta: float,
    contrast_factor: float,
    saturation_factor: float,
) -> np.ndarray:
    """Deterministic core of augment(); magnitudes given explicitly.

    Ops run brightness, contrast, saturation in that order, then clip to
    [-1, 1]. Exact-neutral magnitudes are skipped so they are bitwise no-ops.
    """
    out = pixels
    if brightness_delta != 0.0:
        out = out + np.float32(brightness_delta)
    if contrast_factor != 1.0:
        mean = out.mean(dtype=np.float64)
        out = (out - np.float32(mean)) * np.float32(contrast_factor) + np.float32(mean)
    if saturation_factor != 1.0:
        gray = (out.astype(np.float64) @ LUMA).astype(np.float32)[..., None]
        out = gray + (out - gray) * np.float32(saturation_factor)
    if out is pixels:
        return pixels
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def augment(face: AlignedFace, rng: np.random.Generator, config: AugmentConfig | None = None) -> AlignedFace:
    """Draw jitter magnitudes from `config` ranges and apply them."""
    if config is None:
        config = AugmentConfig()
    if config.is_neutral():
        return face
    delta = rng.uniform(-config.brightness, config.brightness)
    contrast = rng.uniform(*config.contrast)
    saturation = rng.uniform(*config.saturation)
    pixels = apply_photometric(face.pixels, delta, contrast, saturation)
    return AlignedFace(pixels=pixels, resolution=face.resolution, source_id=face.source_id)


class FaceStore:
    """Identity-labeled collection of aligned face crops.

    Directory layout: one subdirectory per identity, images inside. An
    `<image>.landmarks` sidecar (five `x y` lines) triggers alignment on
    load; images without one are treated as pre-aligned square crops.
    """

    def __init__(self, entries, resolution: int, template=None, template_resolution: int = 112):
        # entries: list of (identity, payload) where payload is a path or array
        self.resolution = resolution
        self.template = template
        self.template_resolution = template_resolution
        self._entries = list(entries)
        if not self._entries:
            raise EmptyDataset("face store contains no images")
        self._by_identity = {}
        for idx, (ident, _) in enumerate(self._entries):
            self._by_identity.setdefault(ident, []).append(idx)
        self._cache = {}

    @classmethod
    def from_directory(cls, root, resolution: int, template=None, template_resolution: int = 112):
        root = os.fspath(root)
        entries = []
        if not os.path.isdir(root):
            raise EmptyDataset(f"no such dataset directory: {root}")
        for ident in sorted(os.listdir(root)):
            sub = os.path.join(root, ident)
            if not os.path.isdir(sub):
                continue
            for name in sorted(os.listdir(sub)):
                if name.lower().endswith(IMAGE_EXTENSIONS):
                    entries.append((ident, os.path.join(sub, name)))
        if not entries:
            raise EmptyDataset(f"no images found under {root}")
        return cls(entries, resolution, template, template_resolution)

    @classmethod
    def from_arrays(cls, faces_by_identity: dict, resolution: int):
        """In-memory store; values are lists of HxWx3 arrays in [-1, 1]."""
        entries = []
        for ident in sorted(faces_by_identity):
            for arr in faces_by_identity[ident]:
                entries.append((ident, np.asarray(arr)))
        return cls(entries, resolution)

    def __len__(self):
        return len(self._entries)

    @property
    def identities(self):
        return sorted(self._by_identity)

    def identity_of(self, index: int) -> str:
        return self._entries[index][0]

    def load(self, index: int) -> AlignedFace:
        if index in self._cache:
            return self._cache[index]
        ident, payload = self._entries[index]
        if isinstance(payload, np.ndarray):
            face = resize_face(payload, self.resolution, source_id=ident)
        else:
            face = self._load_path(ident, payload)
        self._cache[index] = face
        return face

    def _load_path(self, ident: str, path: str) -> AlignedFace:
        if path.lower().endswith(".npy"):
            image = np.load(path)
        else:
            from PIL import Image

            with Image.open(path) as im:
                image = np.asarray(im.convert("RGB"))
        sidecar = path + ".landmarks"
        if os.path.exists(sidecar):
            landmarks = read_landmarks(sidecar)
            return align_face(
                image,
                landmarks,
                self.resolution,
                template=self.template,
                template_resolution=self.template_resolution,
                source_id=ident,
            )
        return resize_face(image, self.resolution, source_id=ident)

    def indices_excluding(self, identity: str):
        out = []
        for ident, idxs in self._by_identity.items():
            if ident != identity:
                out.extend(idxs)
        return out


def draw_same_flags(batch_size: int, same_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli flags; if none fired, one uniform slot is forced on."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    flags = rng.random(batch_size) < same_prob
    if not flags.any():
        flags[rng.integers(batch_size)] = True
    return flags


def sample_batch(
    store: FaceStore,
    batch_size: int,
    same_prob: float,
    rng: np.random.Generator,
    augment_config: AugmentConfig | None = None,
) -> list:
    """Draw a training batch of (target, source, is_same) pairs.

    Faces are augmented before pairing, so same-pairs stay pixel-identical.
    """
    if len(store) == 0:
        raise EmptyDataset("cannot sample from an empty store")
    if len(store.identities) < 2:
        raise InsufficientIdentities(
            f"need at least 2 identities, store has {len(store.identities)}"
        )
    flags = draw_same_flags(batch_size, same_prob, rng)
    pairs = []
    for is_same in flags:
        t_idx = int(rng.integers(len(store)))
        target = augment(store.load(t_idx), rng, augment_config)
        if is_same:
            source = target
        else:
            candidates = store.indices_excluding(store.identity_of(t_idx))
            s_idx = candidates[int(rng.integers(len(candidates)))]
            source = augment(store.load(s_idx), rng, augment_config)
        pairs.append(TrainingPair(target=target, source=source, is_same=bool(is_same)))
    return pairs


def faces_to_array(faces) -> np.ndarray:
    """Stack AlignedFaces into a B x 3 x H x W float32 array."""
    return np.stack([f.pixels.transpose(2, 0, 1) for f in faces]).astype(np.float32)
