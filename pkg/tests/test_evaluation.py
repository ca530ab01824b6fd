"""Tests for inlier labeling and precision/recall/F scoring."""

import numpy as np
import pytest

from corrgroup.compatibility import CorrespondenceSet
from corrgroup.errors import DimensionMismatchError, InvalidParameterError
from corrgroup.evaluation import (
    EvalReport,
    label_inliers,
    mean_report,
    report_to_text,
    reports_to_csv,
    score,
)
from corrgroup.geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    random_rotation,
)


class TestLabelInliers:
    def test_exact_correspondence_is_inlier(self):
        rng = np.random.default_rng(0)
        src = PointCloud(rng.normal(size=(10, 3)))
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        tgt = apply_transform(src, t)
        corrs = CorrespondenceSet(np.arange(10), np.arange(10))
        labels = label_inliers(corrs, src, tgt, t, pr=0.1)
        assert labels.all()

    def test_boundary_residual_is_outlier(self):
        # residual exactly multiplier*pr fails the strict '<'
        pr, mult = 0.2, 5.0
        src = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        tgt = PointCloud([[pr * mult, 0.0, 0.0], [1.0, 0.0, 0.0]])
        corrs = CorrespondenceSet([0, 1], [0, 1])
        labels = label_inliers(corrs, src, tgt, RigidTransform.identity(), pr, mult)
        np.testing.assert_array_equal(labels, [False, True])

    def test_known_split_matches_construction(self):
        from corrgroup.synthesis import SynthConfig, synthesize
        pair = synthesize(SynthConfig(n_points=500, n_corrs=100, inlier_ratio=0.2, seed=3))
        labels = label_inliers(pair.corrs, pair.src, pair.tgt, pair.gt, pair.pr)
        np.testing.assert_array_equal(labels, pair.corrs.gt_labels)
        assert labels.sum() == 20

    def test_invariant_under_extra_rigid_motion(self):
        # moving the target cloud and composing the gt transform accordingly
        rng = np.random.default_rng(1)
        src = PointCloud(rng.normal(size=(30, 3)))
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        tgt = apply_transform(src, t)
        corrs = CorrespondenceSet(rng.integers(0, 30, 20), rng.integers(0, 30, 20))
        base = label_inliers(corrs, src, tgt, t, pr=0.05)
        extra = RigidTransform(random_rotation(rng), rng.uniform(-2, 2, 3))
        moved_labels = label_inliers(corrs, src, apply_transform(tgt, extra),
                                     extra.compose(t), pr=0.05)
        np.testing.assert_array_equal(moved_labels, base)

    def test_bad_pr_rejected(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]])
        corrs = CorrespondenceSet([0], [0])
        with pytest.raises(InvalidParameterError):
            label_inliers(corrs, src, src, RigidTransform.identity(), pr=0.0)


class TestScore:
    def test_hand_arithmetic(self):
        kept = np.zeros(30, dtype=bool)
        labels = np.zeros(30, dtype=bool)
        kept[:10] = True          # n_group = 10
        labels[3:17] = True       # n_gt_inlier = 14, overlap 3..9 -> 7
        report = score(kept, labels)
        assert report.n_group == 10
        assert report.n_inlier_in_group == 7
        assert report.n_gt_inlier == 14
        assert report.precision == pytest.approx(0.7, abs=1e-12)
        assert report.recall == pytest.approx(0.5, abs=1e-12)
        assert report.f_paper == pytest.approx(0.35 / 1.2, abs=1e-6)
        assert report.f1 == pytest.approx(0.7 / 1.2, abs=1e-6)

    def test_empty_kept_set_is_zero_and_flagged(self):
        labels = np.array([True, False, True])
        report = score(np.zeros(3, dtype=bool), labels)
        assert report.precision == 0.0 and report.recall == 0.0 and report.f_paper == 0.0
        assert report.degenerate

    def test_perfect_grouping_caps_f_paper_at_half(self):
        labels = np.array([True, False, True, False])
        report = score(labels.copy(), labels)
        assert report.precision == 1.0 and report.recall == 1.0
        assert report.f_paper == pytest.approx(0.5, abs=1e-12)
        assert report.f1 == pytest.approx(1.0, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        kept = rng.uniform(size=50) < 0.4
        labels = rng.uniform(size=50) < 0.3
        base = score(kept, labels)
        perm = rng.permutation(50)
        shuffled = score(kept[perm], labels[perm])
        assert shuffled == base

    def test_bounds_always_hold(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            kept = rng.uniform(size=20) < rng.uniform()
            labels = rng.uniform(size=20) < rng.uniform()
            r = score(kept, labels)
            assert 0.0 <= r.precision <= 1.0
            assert 0.0 <= r.recall <= 1.0
            assert 0.0 <= r.f_paper <= 0.5
            assert 0.0 <= r.f1 <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            score(np.zeros(3, dtype=bool), np.zeros(4, dtype=bool))


class TestSerialization:
    def test_text_roundtrip_fields(self):
        report = EvalReport(0.7, 0.5, 0.35 / 1.2, 0.7 / 1.2, 10, 7, 14, "demo")
        text = report_to_text(report)
        assert "method demo" in text
        assert "n_group 10" in text
        assert "precision 0.7" in text

    def test_csv_has_expected_columns(self):
        report = EvalReport(1.0, 1.0, 0.5, 1.0, 5, 5, 5, "x")
        csv_text = reports_to_csv([report])
        header, row = csv_text.strip().split("\n")
        assert header == "method,n_group,n_inlier_in_group,n_gt_inlier,precision,recall,f_paper,f1"
        assert row.startswith("x,5,5,5,")

    def test_mean_report_averages_metrics_and_pools_counts(self):
        a = EvalReport(1.0, 0.5, 0.5 / 1.5, 1.0 / 1.5, 10, 10, 20, "m")
        b = EvalReport(0.5, 1.0, 0.5 / 1.5, 1.0 / 1.5, 20, 10, 10, "m")
        m = mean_report([a, b])
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.75)
        assert m.n_group == 30 and m.n_gt_inlier == 30
