"""Tests for the compatibility metric and CF feature extraction."""

import numpy as np
import pytest

from corrgroup.compatibility import (
    CompatParams,
    Correspondence,
    CorrespondenceSet,
    ang_constraint,
    compat_score,
    compatibility_matrix,
    dist_constraint,
    extract_cf,
)
from corrgroup.errors import EmptySetError, InvalidParameterError, MissingNormalsError
from corrgroup.geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    random_rotation,
    transform_points,
)


def brute_force_cf(corrs, src, tgt, params, n_dim):
    """Per-pair scalar reference: same ufuncs, independent assembly/sort logic."""
    d = len(corrs)
    dd = 2.0 * params.alpha_dist * params.alpha_dist
    da = 2.0 * params.alpha_ang * params.alpha_ang
    features = []
    for i in range(d):
        scores = []
        for j in range(d):
            if j == i:
                continue
            s_dist = s_ang = np.float64(0.0)
            if params.constraints != "angle":
                psi, psj = src.points[corrs.src_indices[i]], src.points[corrs.src_indices[j]]
                pti, ptj = tgt.points[corrs.tgt_indices[i]], tgt.points[corrs.tgt_indices[j]]
                dxs, dys, dzs = psi[0] - psj[0], psi[1] - psj[1], psi[2] - psj[2]
                dxt, dyt, dzt = pti[0] - ptj[0], pti[1] - ptj[1], pti[2] - ptj[2]
                ds = np.sqrt((dxs * dxs + dys * dys) + dzs * dzs)
                dt = np.sqrt((dxt * dxt + dyt * dyt) + dzt * dzt)
                s_dist = np.abs(ds - dt)
            if params.constraints != "distance":
                nsi, nsj = src.normals[corrs.src_indices[i]], src.normals[corrs.src_indices[j]]
                nti, ntj = tgt.normals[corrs.tgt_indices[i]], tgt.normals[corrs.tgt_indices[j]]
                dot_s = (nsi[0] * nsj[0] + nsi[1] * nsj[1]) + nsi[2] * nsj[2]
                dot_t = (nti[0] * ntj[0] + nti[1] * ntj[1]) + nti[2] * ntj[2]
                s_ang = np.abs(np.arccos(np.clip(dot_s, -1.0, 1.0))
                               - np.arccos(np.clip(dot_t, -1.0, 1.0)))
            if params.constraints == "both":
                arg = -(s_dist * s_dist) / dd - (s_ang * s_ang) / da
            elif params.constraints == "distance":
                arg = -(s_dist * s_dist) / dd
            else:
                arg = -(s_ang * s_ang) / da
            scores.append(float(np.exp(arg)))
        ordered = sorted(scores, reverse=True)[:n_dim]
        ordered += [0.0] * (n_dim - len(ordered))
        features.append(ordered)
    return np.array(features)


def random_scene(rng, n_points=60, n_corrs=25):
    def unit_rows(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    src = PointCloud(rng.uniform(-5, 5, size=(n_points, 3)),
                     unit_rows(rng.normal(size=(n_points, 3))))
    tgt = PointCloud(rng.uniform(-5, 5, size=(n_points, 3)),
                     unit_rows(rng.normal(size=(n_points, 3))))
    corrs = CorrespondenceSet(rng.integers(0, n_points, n_corrs),
                              rng.integers(0, n_points, n_corrs))
    return src, tgt, corrs


def exact_scene(rng, n_points=200, n_inliers=20, n_outliers=80):
    """Exact inliers under a random rigid motion plus rejected random outliers."""
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = 5.0 * d + rng.normal(0, 0.4, size=(n_points, 3))
    src = PointCloud(pts, d)
    t = RigidTransform(random_rotation(rng), rng.uniform(-3, 3, size=3))
    tgt = apply_transform(src, t)
    inlier_idx = rng.choice(n_points, size=n_inliers, replace=False)
    out_src, out_tgt = [], []
    while len(out_src) < n_outliers:
        i, j = rng.integers(0, n_points, size=2)
        if np.linalg.norm(transform_points(pts[i], t) - tgt.points[j]) > 0.5:
            out_src.append(i)
            out_tgt.append(j)
    corrs = CorrespondenceSet(np.concatenate([inlier_idx, out_src]),
                              np.concatenate([inlier_idx, out_tgt]))
    labels = np.arange(n_inliers + n_outliers) < n_inliers
    return src, tgt, corrs, labels, t


class TestConstraints:
    def setup_method(self):
        self.src = PointCloud([[0, 0, 0], [5, 0, 0], [0, 3, 0]],
                              [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
        self.tgt = PointCloud([[0, 0, 0], [3, 0, 0], [1, 0, 0]],
                              [[0, 0, 1], [0.5, 0, np.sqrt(3) / 2], [0, 0, 1]])

    def test_dist_identical_pair_is_zero(self):
        c = Correspondence(0, 0)
        assert dist_constraint(c, c, self.src, self.tgt) == 0.0

    def test_dist_hand_value(self):
        # source pair distance 5, target pair distance 3
        assert dist_constraint(Correspondence(0, 0), Correspondence(1, 1),
                               self.src, self.tgt) == pytest.approx(2.0, abs=1e-12)

    def test_dist_zero_for_exact_inliers(self):
        rng = np.random.default_rng(0)
        src = PointCloud(rng.normal(size=(10, 3)))
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        tgt = apply_transform(src, t)
        corrs = CorrespondenceSet(np.arange(10), np.arange(10))
        for j in range(1, 10):
            assert dist_constraint(corrs[0], corrs[j], src, tgt) < 1e-9

    def test_ang_identical_pair_is_zero(self):
        c = Correspondence(0, 0)
        assert ang_constraint(c, c, self.src, self.tgt) == 0.0

    def test_ang_hand_value(self):
        # source normals 90 deg apart, target normals 30 deg apart
        got = ang_constraint(Correspondence(0, 0), Correspondence(1, 1), self.src, self.tgt)
        assert got == pytest.approx(np.pi / 2 - np.pi / 6, abs=1e-9)

    def test_ang_zero_for_rotated_normals(self):
        rng = np.random.default_rng(1)
        d = rng.normal(size=(10, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        src = PointCloud(rng.normal(size=(10, 3)), d)
        t = RigidTransform(random_rotation(rng), np.zeros(3))
        tgt = apply_transform(src, t)
        corrs = CorrespondenceSet(np.arange(10), np.arange(10))
        for j in range(1, 10):
            assert ang_constraint(corrs[0], corrs[j], src, tgt) < 1e-6

    def test_ang_needs_normals(self):
        bare = PointCloud(self.src.points)
        with pytest.raises(MissingNormalsError):
            ang_constraint(Correspondence(0, 0), Correspondence(1, 1), bare, self.tgt)

    def test_parallel_normals_do_not_nan(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]], [[0, 0, 1], [0, 0, 1]])
        got = ang_constraint(Correspondence(0, 0), Correspondence(1, 1), src, src)
        assert np.isfinite(got) and got == 0.0


class TestCompatScore:
    def test_identical_pair_scores_one(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]], [[0, 0, 1], [0, 0, 1]])
        params = CompatParams(1.0)
        c = Correspondence(0, 0)
        assert compat_score(c, c, src, src, params) == 1.0

    def test_analytic_values(self):
        from corrgroup.compatibility import score_from_constraints
        params = CompatParams(alpha_dist=2.0, alpha_ang=0.5)
        assert score_from_constraints(2.0, 0.0, params) == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert score_from_constraints(2.0, 0.5, params) == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        src, tgt, corrs = random_scene(rng)
        params = CompatParams(1.5, 0.3)
        for _ in range(20):
            i, j = rng.integers(0, len(corrs), size=2)
            assert compat_score(corrs[int(i)], corrs[int(j)], src, tgt, params) == \
                compat_score(corrs[int(j)], corrs[int(i)], src, tgt, params)

    def test_monotone_in_each_constraint(self):
        from corrgroup.compatibility import score_from_constraints
        params = CompatParams(1.0, 0.5)
        dists = np.linspace(0, 5, 30)
        scores = [score_from_constraints(d, 0.7, params) for d in dists]
        assert np.all(np.diff(scores) < 0)
        angs = np.linspace(0, np.pi, 30)
        scores = [score_from_constraints(1.3, a, params) for a in angs]
        assert np.all(np.diff(scores) < 0)

    def test_constraint_modes(self):
        from corrgroup.compatibility import score_from_constraints
        dist_only = CompatParams(1.0, 0.5, constraints="distance")
        ang_only = CompatParams(1.0, 0.5, constraints="angle")
        assert score_from_constraints(1.0, 3.0, dist_only) == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert score_from_constraints(3.0, 0.5, ang_only) == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_bad_params_rejected(self):
        with pytest.raises(InvalidParameterError):
            CompatParams(0.0)
        with pytest.raises(InvalidParameterError):
            CompatParams(1.0, -0.1)
        with pytest.raises(InvalidParameterError):
            CompatParams(1.0, 0.5, constraints="fancy")


class TestExtractCf:
    def test_sort_and_truncate(self):
        # engineered so correspondence 0's scores against 1..3 are descending-sortable
        src = PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0], [9, 0, 0]])
        tgt = PointCloud([[0, 0, 0], [1, 0, 0], [2.5, 0, 0], [4, 0, 0]])
        corrs = CorrespondenceSet([0, 1, 2, 3], [0, 1, 2, 3])
        params = CompatParams(1.0, constraints="distance")
        feats = extract_cf(corrs, src, tgt, params, n_dim=2)
        full = compatibility_matrix(corrs, src, tgt, params)
        expected = np.sort(np.delete(full[0], 0))[::-1][:2]
        np.testing.assert_array_equal(feats[0], expected)
        assert feats.shape == (4, 2)

    def test_zero_padding_when_too_few(self):
        rng = np.random.default_rng(3)
        src, tgt, corrs = random_scene(rng, n_corrs=3)
        feats = extract_cf(corrs, src, tgt, CompatParams(1.0, 0.3), n_dim=5)
        assert feats.shape == (3, 5)
        assert np.all(feats[:, 2:] == 0.0)
        assert np.all(feats[:, :2] > 0.0)

    def test_exact_inliers_dominate(self):
        # seeded construction: 20 exact inliers, 80 rejected outliers, N=50;
        # inliers have 19 perfect partners, outliers have none
        rng = np.random.default_rng(4)
        src, tgt, corrs, labels, _ = exact_scene(rng)
        params = CompatParams(0.25, np.deg2rad(15.0))
        feats = extract_cf(corrs, src, tgt, params, n_dim=50)
        inlier_feats = feats[labels]
        outlier_feats = feats[~labels]
        assert np.all(inlier_feats[:, :19] > 1.0 - 1e-6)
        assert np.all(outlier_feats[:, 18] < 1.0 - 1e-6)
        assert np.all(outlier_feats[:, 19] < 1.0 - 1e-6)

    def test_empty_set_rejected(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(EmptySetError):
            extract_cf(CorrespondenceSet([0], [0]), src, src, CompatParams(1.0), n_dim=3)

    def test_bad_n_dim_rejected(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]])
        corrs = CorrespondenceSet([0, 1], [0, 1])
        with pytest.raises(InvalidParameterError):
            extract_cf(corrs, src, src, CompatParams(1.0), n_dim=0)

    def test_out_of_bounds_indices_rejected(self):
        src = PointCloud([[0, 0, 0], [1, 0, 0]])
        corrs = CorrespondenceSet([0, 5], [0, 1])
        with pytest.raises(InvalidParameterError):
            extract_cf(corrs, src, src, CompatParams(1.0), n_dim=2)

    def test_matches_brute_force_bitwise(self):
        rng = np.random.default_rng(5)
        for trial in range(12):
            n_corrs = int(rng.integers(5, 60))
            n_dim = int(rng.integers(1, n_corrs + 10))
            mode = ("both", "distance", "angle")[trial % 3]
            src, tgt, corrs = random_scene(rng, n_corrs=n_corrs)
            params = CompatParams(float(rng.uniform(0.5, 3.0)),
                                  float(rng.uniform(0.1, 1.0)), constraints=mode)
            fast = extract_cf(corrs, src, tgt, params, n_dim=n_dim)
            slow = brute_force_cf(corrs, src, tgt, params, n_dim)
            assert np.array_equal(fast, slow), f"trial {trial} ({mode}, D={n_corrs}, N={n_dim})"

    def test_rotation_invariance(self):
        rng = np.random.default_rng(6)
        src, tgt, corrs = random_scene(rng, n_corrs=30)
        params = CompatParams(1.0, 0.4)
        base = extract_cf(corrs, src, tgt, params, n_dim=10)
        for _ in range(5):
            t = RigidTransform(random_rotation(rng), rng.uniform(-3, 3, 3))
            rotated = extract_cf(corrs, apply_transform(src, t), tgt, params, n_dim=10)
            np.testing.assert_allclose(rotated, base, atol=1e-6)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        src, tgt, corrs = random_scene(rng, n_corrs=20)
        params = CompatParams(1.0, 0.4)
        base = extract_cf(corrs, src, tgt, params, n_dim=8)
        perm = rng.permutation(len(corrs))
        shuffled = CorrespondenceSet(corrs.src_indices[perm], corrs.tgt_indices[perm])
        got = extract_cf(shuffled, src, tgt, params, n_dim=8)
        np.testing.assert_array_equal(got, base[perm])

    def test_thread_count_does_not_change_results(self):
        rng = np.random.default_rng(8)
        src, tgt, corrs = random_scene(rng, n_points=300, n_corrs=150)
        params = CompatParams(1.0, 0.4)
        one = extract_cf(corrs, src, tgt, params, n_dim=20, threads=1)
        four = extract_cf(corrs, src, tgt, params, n_dim=20, threads=4)
        assert np.array_equal(one, four)


class TestCompatibilityMatrix:
    def test_diagonal_is_one_and_symmetric(self):
        rng = np.random.default_rng(9)
        src, tgt, corrs = random_scene(rng, n_corrs=15)
        m = compatibility_matrix(corrs, src, tgt, CompatParams(1.0, 0.4))
        # self-score is 1 up to the last-ulp error of float normal self-dots
        np.testing.assert_allclose(np.diag(m), np.ones(15), atol=1e-14)
        np.testing.assert_array_equal(m, m.T)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(10)
        src, tgt, corrs = random_scene(rng)
        m = compatibility_matrix(corrs, src, tgt, CompatParams(0.8, 0.2))
        assert m.min() >= 0.0 and m.max() <= 1.0
