"""Face alignment: five-point landmarks to a recognizer template.

The warp is a least-squares similarity transform (rotation, uniform scale,
translation) estimated in closed form, applied with bilinear resampling and
reflect padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateLandmarks, ShapeMismatch

# Canonical five-point template (left eye, right eye, nose tip, left mouth
# corner, right mouth corner) in a 112x112 frame, as used by the 112-input
# recognizer family this toolkit aligns into.
TEMPLATE_RESOLUTION = 112
DEFAULT_TEMPLATE = np.array(
    [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ],
    dtype=np.float64,
)

DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class LandmarkSet:
    """Five (x, y) pixel coordinates in source-image space."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (5, 2):
            raise ShapeMismatch(f"expected 5x2 landmark array, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeMismatch("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)


@dataclass
class AlignedFace:
    """A square face crop in [-1, 1] with its identity label."""

    pixels: np.ndarray  # HxWx3, float32, values in [-1, 1]
    resolution: int
    source_id: str = ""

    def validate(self, working_sizes=None):
        h, w = self.pixels.shape[:2]
        if h != w:
            raise ShapeMismatch(f"aligned face must be square, got {h}x{w}")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeMismatch("aligned face must be HxWx3")
        if h != self.resolution:
            raise ShapeMismatch(
                f"resolution field {self.resolution} != array size {h}"
            )
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < -1.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [-1, 1]: [{lo}, {hi}]")
        if working_sizes is not None and self.resolution not in working_sizes:
            raise ValueError(
                f"resolution {self.resolution} not in configured sizes {working_sizes}"
            )
        return self


def estimate_similarity_transform(detected: LandmarkSet, template: LandmarkSet) -> np.ndarray:
    """Closed-form least-squares similarity fit, detected -> template.

    Returns the 2x3 matrix [sR | t] minimizing sum ||sR p_i + t - q_i||^2.
    """
    src = detected.points
    dst = template.points
    n = src.shape[0]

    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    src_c = src - src_mean
    dst_c = dst - dst_mean

    # Degenerate when the detected cloud has (near-)zero extent off a line.
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] <= DEGENERACY_TOL * max(1.0, sv[0]):
        raise DegenerateLandmarks(
            "detected landmarks are coincident or collinear within tolerance"
        )

    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[-1] = -1.0
    rot = u @ np.diag(s) @ vt
    var_src = (src_c ** 2).sum() / n
    scale = (d * s).sum() / var_src
    shift = dst_mean - scale * rot @ src_mean

    out = np.empty((2, 3), dtype=np.float64)
    out[:, :2] = scale * rot
    out[:, 2] = shift
    return out


def _to_unit_range(image: np.ndarray) -> np.ndarray:
    """Map an image array to float64 values in [-1, 1]."""
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 127.5 - 1.0
    img = image.astype(np.float64)
    if img.size and img.min() >= -1.0 - 1e-6 and img.max() <= 1.0 + 1e-6:
        return np.clip(img, -1.0, 1.0)
    if img.size and img.min() >= 0.0 and img.max() <= 1.0 + 1e-6:
        return np.clip(img, 0.0, 1.0) * 2.0 - 1.0
    # assume 0..255 floats
    return np.clip(img, 0.0, 255.0) / 127.5 - 1.0


def warp_affine(image: np.ndarray, matrix: np.ndarray, out_size: int) -> np.ndarray:
    """Apply a 2x3 forward transform with bilinear sampling, reflect padding."""
    full = np.vstack([matrix, [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(full)
    # scipy's affine_transform maps output coords to input coords and works
    # in (row, col) order; the matrices here are (x, y).
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    mat_rc = swap @ inv[:2, :2] @ swap
    off_rc = swap @ inv[:2, 2]
    channels = [
        ndimage.affine_transform(
            image[:, :, c],
            mat_rc,
            offset=off_rc,
            output_shape=(out_size, out_size),
            order=1,
            mode="reflect",
        )
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=-1)


def align_face(
    image: np.ndarray,
    landmarks: LandmarkSet,
    out_resolution: int,
    template: LandmarkSet | None = None,
    template_resolution: int = TEMPLATE_RESOLUTION,
    source_id: str = "",
) -> AlignedFace:
    """Warp `image` so `landmarks` land on the template, at out_resolution."""
    if out_resolution <= 0:
        raise ValueError("out_resolution must be positive")
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ShapeMismatch("expected a non-empty HxWx3 image")
    if template is None:
        template = LandmarkSet(DEFAULT_TEMPLATE)
    scale = out_resolution / float(template_resolution)
    target = LandmarkSet(template.points * scale)
    matrix = estimate_similarity_transform(landmarks, target)
    img = _to_unit_range(image)
    warped = warp_affine(img, matrix, out_resolution)
    pixels = np.clip(warped, -1.0, 1.0).astype(np.float32)
    return AlignedFace(pixels=pixels, resolution=out_resolution, source_id=source_id)


def resize_face(image: np.ndarray, out_resolution: int, source_id: str = "") -> AlignedFace:
    """Treat `image` as a pre-aligned crop: center-map it to out_resolution."""
    img = _to_unit_range(image)
    h, w = img.shape[:2]
    if h == w == out_resolution:
        out = img
    else:
        zoom = (out_resolution / h, out_resolution / w, 1.0)
        out = ndimage.zoom(img, zoom, order=1, mode="reflect", grid_mode=True)
    pixels = np.clip(out, -1.0, 1.0).astype(np.float32)
    return AlignedFace(pixels=pixels, resolution=out_resolution, source_id=source_id)


def read_landmarks(path) -> LandmarkSet:
    """Read a sidecar of five `x y` lines."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y = line.split()[:2]
            rows.append((float(x), float(y)))
    if len(rows) != 5:
        raise ShapeMismatch(f"{path}: expected 5 landmark lines, got {len(rows)}")
    return LandmarkSet(np.array(rows, dtype=np.float64))


def write_landmarks(path, landmarks: LandmarkSet):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in landmarks.points:
            fh.write(f"{x} {y}\n")


def read_template(path) -> tuple[LandmarkSet, int]:
    """Read a template file: `resolution N` header then five `x y` lines."""
    resolution = TEMPLATE_RESOLUTION
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("resolution"):
                resolution = int(line.split()[1])
                continue
            x, y = line.split()[:2]
            rows.append((float(x), float(y)))
    if len(rows) != 5:
        raise ShapeMismatch(f"{path}: expected 5 template points, got {len(rows)}")
    return LandmarkSet(np.array(rows, dtype=np.float64)), resolution
