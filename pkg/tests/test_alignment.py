import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swapkit.alignment import (
    DEFAULT_TEMPLATE,
    TEMPLATE_RESOLUTION,
    AlignedFace,
    LandmarkSet,
    align_face,
    estimate_similarity_transform,
    read_landmarks,
    read_template,
    resize_face,
    warp_affine,
    write_landmarks,
)
from swapkit.errors import DegenerateLandmarks, ShapeMismatch


def apply_transform(matrix, points):
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


class TestSimilarityTransform:
    @given(
        angle=st.floats(-math.pi, math.pi),
        scale=st.floats(0.5, 2.0),
        tx=st.floats(-20, 20),
        ty=st.floats(-20, 20),
    )
    def test_recovers_known_similarity(self, angle, scale, tx, ty):
        rot = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        src = DEFAULT_TEMPLATE
        dst = scale * src @ rot.T + np.array([tx, ty])
        m = estimate_similarity_transform(LandmarkSet(src), LandmarkSet(dst))
        assert np.allclose(apply_transform(m, src), dst, atol=1e-8)

    def test_pure_translation(self):
        src = DEFAULT_TEMPLATE
        m = estimate_similarity_transform(
            LandmarkSet(src), LandmarkSet(src + np.array([3.0, -2.0]))
        )
        assert np.allclose(m[:, :2], np.eye(2), atol=1e-10)
        assert np.allclose(m[:, 2], [3.0, -2.0], atol=1e-10)

    def test_no_reflection(self):
        # mirrored targets must still produce a proper rotation
        src = DEFAULT_TEMPLATE
        dst = src * np.array([-1.0, 1.0])
        m = estimate_similarity_transform(LandmarkSet(src), LandmarkSet(dst))
        assert np.linalg.det(m[:, :2]) > 0

    def test_degenerate_points_raise(self):
        src = np.tile([[5.0, 5.0]], (5, 1))
        with pytest.raises(DegenerateLandmarks):
            estimate_similarity_transform(LandmarkSet(src), LandmarkSet(DEFAULT_TEMPLATE))

    def test_collinear_points_raise(self):
        src = np.stack([np.arange(5.0), np.arange(5.0)], axis=1)
        with pytest.raises(DegenerateLandmarks):
            estimate_similarity_transform(LandmarkSet(src), LandmarkSet(DEFAULT_TEMPLATE))


class TestWarp:
    def test_identity_transform_is_exact(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(-1, 1, size=(16, 16, 3)).astype(np.float32)
        m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out = warp_affine(img, m, 16)
        assert np.allclose(out, img, atol=1e-6)

    def test_integer_translation_shifts_interior(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(-1, 1, size=(12, 12, 3)).astype(np.float32)
        m = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])  # shift +2 in x
        out = warp_affine(img, m, 12)
        assert np.allclose(out[:, 2:12, :], img[:, 0:10, :], atol=1e-5)

    def test_output_shape(self):
        img = np.zeros((20, 20, 3), dtype=np.float32)
        out = warp_affine(img, np.array([[1.0, 0, 0], [0, 1.0, 0]]), 8)
        assert out.shape == (8, 8, 3)


class TestAlignFace:
    def test_landmarks_on_template_give_identity_warp(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(-1, 1, size=(112, 112, 3)).astype(np.float32)
        face = align_face(img, LandmarkSet(DEFAULT_TEMPLATE.copy()), 112)
        assert face.resolution == 112
        assert np.allclose(face.pixels, img, atol=1e-5)

    def test_output_contract(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 255, size=(64, 80, 3), dtype=np.uint8)
        pts = DEFAULT_TEMPLATE * 0.4 + np.array([10.0, 5.0])
        face = align_face(img, LandmarkSet(pts), 32, source_id="a")
        face.validate()
        assert face.pixels.shape == (32, 32, 3)
        assert face.pixels.dtype == np.float32
        assert face.pixels.min() >= -1.0 and face.pixels.max() <= 1.0
        assert face.source_id == "a"

    def test_uint8_range_mapping(self):
        img = np.full((8, 8, 3), 255, dtype=np.uint8)
        face = resize_face(img, 8)
        assert np.allclose(face.pixels, 1.0, atol=1e-6)
        face = resize_face(np.zeros((8, 8, 3), dtype=np.uint8), 8)
        assert np.allclose(face.pixels, -1.0, atol=1e-6)

    def test_resize_changes_resolution(self):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        assert resize_face(img, 16).pixels.shape == (16, 16, 3)


class TestAlignedFaceValidation:
    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeMismatch):
            AlignedFace(pixels=np.zeros((8, 8, 1), dtype=np.float32), resolution=8).validate()

    def test_rejects_resolution_mismatch(self):
        with pytest.raises(ShapeMismatch):
            AlignedFace(pixels=np.zeros((8, 8, 3), dtype=np.float32), resolution=16).validate()

    def test_rejects_out_of_range(self):
        bad = np.full((8, 8, 3), 3.0, dtype=np.float32)
        with pytest.raises(ValueError):
            AlignedFace(pixels=bad, resolution=8).validate()

    def test_landmark_set_shape(self):
        with pytest.raises(ShapeMismatch):
            LandmarkSet(points=np.zeros((4, 2)))


class TestLandmarkIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "face.landmarks"
        pts = DEFAULT_TEMPLATE + 0.125
        write_landmarks(path, LandmarkSet(pts))
        back = read_landmarks(path)
        assert np.allclose(back.points, pts, atol=1e-12)

    def test_read_template(self, tmp_path):
        path = tmp_path / "template.txt"
        lines = ["resolution 112"] + [f"{x} {y}" for x, y in DEFAULT_TEMPLATE]
        path.write_text("\n".join(lines) + "\n")
        template, res = read_template(path)
        assert res == TEMPLATE_RESOLUTION
        assert np.allclose(template.points, DEFAULT_TEMPLATE)
