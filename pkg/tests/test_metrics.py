"""Evaluation metrics against closed forms and crafted retrieval cases."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swapkit.errors import EmptyGallery, NonPSDCovariance, ShapeMismatch
from swapkit.metrics import (
    EvalAdapters,
    GaussianStats,
    MetricReport,
    PerceptualFeatureExtractor,
    SeededEstimator,
    evaluate,
    frechet_distance,
    gaussian_stats,
    identity_retrieval,
    pairwise_l2_metric,
    read_report,
    retrieval_fraction,
    sqrtm_psd,
    write_report,
)
from swapkit.perceptual import SeededPerceptual
from swapkit.synthetic import synthetic_store


def _random_psd(n, seed, rank=None):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, rank or n))
    return b @ b.T


class TestGaussianStats:
    def test_matches_numpy_cov(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((20, 5))
        stats = gaussian_stats(feats)
        assert np.allclose(stats.mean, feats.mean(axis=0))
        assert np.allclose(stats.covariance, np.cov(feats.T, ddof=1))

    def test_one_dimensional_features_promoted(self):
        feats = np.array([1.0, 3.0, 5.0])
        stats = gaussian_stats(feats)
        assert stats.mean.shape == (1,)
        assert stats.covariance[0, 0] == pytest.approx(np.var(feats, ddof=1))

    def test_single_sample_rejected(self):
        with pytest.raises(ShapeMismatch):
            gaussian_stats(np.ones((1, 4)))

    def test_shape_and_symmetry_validated(self):
        with pytest.raises(ShapeMismatch):
            GaussianStats(mean=np.zeros(3), covariance=np.eye(2))
        asym = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(NonPSDCovariance):
            GaussianStats(mean=np.zeros(2), covariance=asym)


class TestMatrixSqrt:
    def test_known_diagonal(self):
        root = sqrtm_psd(np.diag([4.0, 9.0, 0.25]))
        assert np.allclose(root, np.diag([2.0, 3.0, 0.5]), atol=1e-9)

    def test_zero_matrix(self):
        assert np.array_equal(sqrtm_psd(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_identity(self):
        assert np.allclose(sqrtm_psd(np.eye(5)), np.eye(5), atol=1e-10)

    @pytest.mark.parametrize("n", [2, 8, 32, 64])
    def test_random_psd_residual(self, n):
        a = _random_psd(n, seed=n)
        root = sqrtm_psd(a)
        residual = np.linalg.norm(root @ root - a) / np.linalg.norm(a)
        assert residual < 1e-5
        assert np.allclose(root, root.T)

    def test_rank_deficient_input(self):
        a = _random_psd(16, seed=3, rank=4)
        root = sqrtm_psd(a)
        residual = np.linalg.norm(root @ root - a) / np.linalg.norm(a)
        assert residual < 1e-5


def _stats_1d(mu, var):
    return GaussianStats(mean=np.array([mu]), covariance=np.array([[var]]))


class TestFrechetDistance:
    def test_one_dimensional_closed_form(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            mu1, mu2 = rng.normal(0, 3, size=2)
            v1, v2 = rng.uniform(0.01, 5.0, size=2)
            got = frechet_distance(_stats_1d(mu1, v1), _stats_1d(mu2, v2))
            expected = (mu1 - mu2) ** 2 + (np.sqrt(v1) - np.sqrt(v2)) ** 2
            assert got == pytest.approx(expected, abs=1e-5)

    def test_diagonal_closed_form(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            d = int(rng.integers(2, 10))
            mu1 = rng.normal(0, 2, size=d)
            mu2 = rng.normal(0, 2, size=d)
            v1 = rng.uniform(0.01, 4.0, size=d)
            v2 = rng.uniform(0.01, 4.0, size=d)
            p = GaussianStats(mean=mu1, covariance=np.diag(v1))
            q = GaussianStats(mean=mu2, covariance=np.diag(v2))
            expected = ((mu1 - mu2) ** 2).sum() + ((np.sqrt(v1) - np.sqrt(v2)) ** 2).sum()
            assert frechet_distance(p, q) == pytest.approx(expected, abs=1e-5)

    def test_symmetry(self):
        p = GaussianStats(mean=np.zeros(6), covariance=_random_psd(6, seed=1))
        q = GaussianStats(mean=np.ones(6), covariance=_random_psd(6, seed=2))
        assert frechet_distance(p, q) == pytest.approx(frechet_distance(q, p), rel=1e-9)

    @pytest.mark.parametrize("n", [2, 16, 64])
    def test_self_distance_is_zero(self, n):
        p = GaussianStats(mean=np.ones(n), covariance=_random_psd(n, seed=n + 1))
        assert frechet_distance(p, p) == pytest.approx(0.0, abs=1e-5)

    def test_indefinite_covariance_rejected(self):
        bad = GaussianStats(mean=np.zeros(2), covariance=np.diag([1.0, -0.5]))
        good = GaussianStats(mean=np.zeros(2), covariance=np.eye(2))
        with pytest.raises(NonPSDCovariance):
            frechet_distance(bad, good)

    def test_dimension_mismatch_rejected(self):
        p = GaussianStats(mean=np.zeros(2), covariance=np.eye(2))
        q = GaussianStats(mean=np.zeros(3), covariance=np.eye(3))
        with pytest.raises(ShapeMismatch):
            frechet_distance(p, q)


class TestRetrieval:
    def test_perfect_retrieval(self):
        gallery = np.eye(3)
        queries = np.array([[0.9, 0.1, 0.0], [0.0, 1.0, 0.1], [0.1, 0.0, 0.8]])
        frac = retrieval_fraction(queries, ["a", "b", "c"], gallery, ["a", "b", "c"])
        assert frac == 1.0

    def test_total_miss(self):
        gallery = np.eye(2)
        queries = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert retrieval_fraction(queries, ["a", "b"], gallery, ["a", "b"]) == 0.0

    def test_partial_hit_rate(self):
        gallery = np.eye(2)
        queries = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert retrieval_fraction(queries, ["a", "b"], gallery, ["a", "b"]) == 0.5

    def test_scale_invariance(self):
        gallery = np.array([[2.0, 0.0], [0.0, 0.5]])
        queries = np.array([[100.0, 1.0]])
        assert retrieval_fraction(queries, ["a"], gallery, ["a", "b"]) == 1.0

    def test_empty_gallery_rejected(self):
        with pytest.raises(EmptyGallery):
            retrieval_fraction(np.eye(2), ["a", "b"], np.zeros((0, 2)), [])

    def test_length_mismatches_rejected(self):
        with pytest.raises(ShapeMismatch):
            retrieval_fraction(np.eye(2), ["a", "b"], np.eye(2), ["a"])
        with pytest.raises(ShapeMismatch):
            retrieval_fraction(np.eye(2), ["a"], np.eye(2), ["a", "b"])

    def test_identity_retrieval_of_gallery_itself(self, stub_backbone, small_store):
        seen = {}
        for i in range(len(small_store)):
            face = small_store.load(i)
            seen.setdefault(face.source_id, face)
        gallery = list(seen.values())
        assert identity_retrieval(gallery, gallery, stub_backbone) == 1.0

    def test_identity_retrieval_with_wrong_labels(self, stub_backbone, small_store):
        seen = {}
        for i in range(len(small_store)):
            face = small_store.load(i)
            seen.setdefault(face.source_id, face)
        gallery = list(seen.values())
        ids = [f.source_id for f in gallery]
        rotated = [
            dataclasses.replace(f, source_id=ids[(i + 1) % len(ids)])
            for i, f in enumerate(gallery)
        ]
        assert identity_retrieval(rotated, gallery, stub_backbone) == 0.0

    def test_duplicate_gallery_ids_rejected(self, stub_backbone, small_store):
        face = small_store.load(0)
        with pytest.raises(ShapeMismatch):
            identity_retrieval([face], [face, face], stub_backbone)


class TestPairwiseL2:
    def test_hand_value(self):
        a = np.array([[0.0, 0.0], [3.0, 4.0]])
        b = np.array([[3.0, 4.0], [3.0, 4.0]])
        assert pairwise_l2_metric(a, b) == pytest.approx(2.5)

    def test_single_vector_promoted(self):
        assert pairwise_l2_metric([1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            pairwise_l2_metric(np.zeros((2, 3)), np.zeros((3, 3)))


class TestSeededEstimator:
    def test_deterministic_across_instances(self, small_store):
        face = small_store.load(1)
        a = SeededEstimator(3, 101).estimate(face)
        b = SeededEstimator(3, 101).estimate(face)
        assert np.array_equal(a, b)
        assert a.shape == (3,)

    def test_seed_changes_output(self, small_store):
        face = small_store.load(1)
        a = SeededEstimator(3, 101).estimate(face)
        b = SeededEstimator(3, 102).estimate(face)
        assert not np.allclose(a, b)

    def test_batch_stacks_rows(self, small_store):
        est = SeededEstimator(4, 7)
        faces = [small_store.load(i) for i in range(3)]
        batch = est.estimate_batch(faces)
        assert batch.shape == (3, 4)
        assert np.array_equal(batch[1], est.estimate(faces[1]))

    def test_estimator_id_names_configuration(self):
        assert SeededEstimator(3, 101).estimator_id == "SeededEstimator(dim=3,seed=101)"


class TestEvaluate:
    @pytest.fixture()
    def adapters(self, stub_backbone, seeded_perceptual):
        return EvalAdapters(
            encoder=stub_backbone,
            pose=SeededEstimator(3, 101),
            expression=SeededEstimator(10, 102),
            fid_extractor=PerceptualFeatureExtractor(seeded_perceptual),
        )

    def test_full_report(self, adapters, small_store):
        report = evaluate(small_store, small_store, adapters, gallery_store=small_store)
        assert report.n_images == len(small_store)
        assert report.id_retrieval == 1.0
        assert report.pose_l2 == pytest.approx(0.0, abs=1e-9)
        assert report.expression_l2 == pytest.approx(0.0, abs=1e-9)
        assert report.fid == pytest.approx(0.0, abs=1e-4)
        assert "SeededPerceptual" in report.fid_extractor

    def test_absent_adapters_reported_as_none(self, small_store):
        report = evaluate(small_store, small_store, EvalAdapters())
        assert report.id_retrieval is None
        assert report.pose_l2 is None
        assert report.expression_l2 is None
        assert report.fid is None

    def test_pose_l2_matches_manual_computation(self, small_store):
        est = SeededEstimator(3, 101)
        other = synthetic_store(4, 5, resolution=64, seed=9)
        report = evaluate(other, small_store, EvalAdapters(pose=est))
        ref = est.estimate_batch([small_store.load(i) for i in range(len(small_store))])
        swp = est.estimate_batch([other.load(i) for i in range(len(other))])
        expected = float(np.linalg.norm(ref - swp, axis=1).mean())
        assert report.pose_l2 == pytest.approx(expected, rel=1e-12)

    def test_paired_metrics_require_equal_counts(self, small_store):
        shorter = synthetic_store(3, 2, resolution=64, seed=1)
        with pytest.raises(ShapeMismatch):
            evaluate(shorter, small_store, EvalAdapters(pose=SeededEstimator(3, 101)))

    def test_report_round_trip(self, adapters, small_store, tmp_path):
        report = evaluate(small_store, small_store, adapters, gallery_store=small_store)
        path = tmp_path / "report.json"
        write_report(report, path)
        back = read_report(path)
        assert back == report

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text('{"schema_version": 999, "n_images": 1}')
        with pytest.raises(ValueError):
            read_report(path)
