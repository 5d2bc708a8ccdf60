"""Procedural face-like images for offline tests and demos.

Each identity is a seeded set of geometry and color parameters; each image
adds per-sample pose and lighting jitter. The images are crude but carry
stable identity signal for the stub encoders, which is all the desk-scale
harness needs.
"""

from __future__ import annotations

import os

import numpy as np

from .pipeline import FaceStore


def synthetic_face(identity_seed: int, variation_seed: int, resolution: int = 64) -> np.ndarray:
    """One HxWx3 float32 face in [-1, 1]."""
    id_rng = np.random.default_rng(identity_seed)
    skin = id_rng.uniform(0.1, 0.7, size=3)
    eye_color = id_rng.uniform(-0.9, -0.3, size=3)
    mouth_color = id_rng.uniform(-0.6, 0.1, size=3)
    eye_dx = id_rng.uniform(0.16, 0.26)
    eye_y = id_rng.uniform(-0.18, -0.08)
    eye_r = id_rng.uniform(0.04, 0.07)
    mouth_y = id_rng.uniform(0.18, 0.30)
    mouth_w = id_rng.uniform(0.12, 0.22)
    mouth_h = id_rng.uniform(0.025, 0.06)
    face_w = id_rng.uniform(0.55, 0.72)
    face_h = id_rng.uniform(0.72, 0.9)
    background = id_rng.uniform(-0.9, -0.2, size=3)

    var_rng = np.random.default_rng(variation_seed)
    cx = var_rng.uniform(-0.08, 0.08)
    cy = var_rng.uniform(-0.08, 0.08)
    light = var_rng.uniform(-0.15, 0.15)
    tilt = var_rng.uniform(-0.1, 0.1)

    ys, xs = np.mgrid[0:resolution, 0:resolution]
    u = (xs / (resolution - 1)) * 2.0 - 1.0
    v = (ys / (resolution - 1)) * 2.0 - 1.0
    # small rotation approximated by shear for pose variation
    ur = u - cx + tilt * v
    vr = v - cy - tilt * u

    img = np.empty((resolution, resolution, 3), dtype=np.float64)
    img[:] = background

    face_mask = (ur / (face_w / 2)) ** 2 + (vr / (face_h / 2)) ** 2 <= 1.0
    img[face_mask] = skin

    for sign in (-1.0, 1.0):
        eye = ((ur - sign * eye_dx) / eye_r) ** 2 + ((vr - eye_y) / eye_r) ** 2 <= 1.0
        img[eye & face_mask] = eye_color

    mouth = (np.abs(ur) <= mouth_w) & (np.abs(vr - mouth_y) <= mouth_h)
    img[mouth & face_mask] = mouth_color

    shade = 1.0 + light * vr[..., None]
    img = img * shade + light * 0.3
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def synthetic_store(
    n_identities: int,
    per_identity: int,
    resolution: int = 64,
    seed: int = 0,
) -> FaceStore:
    """In-memory identity-labeled store of procedural faces."""
    faces = {}
    width = max(2, len(str(n_identities - 1)))
    for i in range(n_identities):
        ident = f"id{i:0{width}d}"
        faces[ident] = [
            synthetic_face(seed * 100003 + i, seed * 900007 + i * 1009 + j, resolution)
            for j in range(per_identity)
        ]
    return FaceStore.from_arrays(faces, resolution)


def write_synthetic_dataset(
    root,
    n_identities: int,
    per_identity: int,
    resolution: int = 64,
    seed: int = 0,
):
    """Write the same faces as PNG files, one directory per identity."""
    from PIL import Image

    root = os.fspath(root)
    width = max(2, len(str(n_identities - 1)))
    for i in range(n_identities):
        ident = f"id{i:0{width}d}"
        sub = os.path.join(root, ident)
        os.makedirs(sub, exist_ok=True)
        for j in range(per_identity):
            face = synthetic_face(seed * 100003 + i, seed * 900007 + i * 1009 + j, resolution)
            as_u8 = np.round((face.astype(np.float64) + 1.0) * 127.5).astype(np.uint8)
            Image.fromarray(as_u8).save(os.path.join(sub, f"{ident}_{j:04d}.png"))
    return root
