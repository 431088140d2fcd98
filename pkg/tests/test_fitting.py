import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sympose import fitting
from sympose.errors import FitError
from sympose.fitting import CorrespondenceSet, FitConfig, filter_by_confidence, least_squares_fit, prosac_fit, ransac_fit
from sympose.geometry import RigidTransform, axis_angle_matrix
from sympose.metrics import EvaluationInstance, add


def rand_pose(rng, scale=0.5):
    return RigidTransform(axis_angle_matrix(rng.normal(size=3), rng.uniform(-math.pi, math.pi)), rng.normal(scale=scale, size=3))


def horn_fit(src, dst, w=None):
    """Unit-quaternion closed form (eigenvector of the 4x4 profile matrix)."""
    w = np.ones(len(src)) if w is None else np.asarray(w, float)
    w = w / w.sum()
    cs, cd = w @ src, w @ dst
    S = ((src - cs) * w[:, None]).T @ (dst - cd)
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = S
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    vals, vecs = np.linalg.eigh(N)
    q0, qx, qy, qz = vecs[:, -1]
    R = np.array(
        [
            [q0 * q0 + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0 * q0 - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0 * q0 - qx * qx - qy * qy + qz * qz],
        ]
    )
    return R, cd - R @ cs


def exact_set(rng, pose, n=50, planar=False):
    obj = rng.uniform(-0.05, 0.05, size=(n, 3))
    if planar:
        obj[:, 2] = 0.0
    return CorrespondenceSet(obj, pose.apply(obj), np.ones(n))


def test_filter_examples():
    c = CorrespondenceSet(np.zeros((3, 3)), np.zeros((3, 3)), [1.0, 1.0, 1.0])
    assert len(filter_by_confidence(c, 0.8)) == 3
    c = CorrespondenceSet(np.zeros((3, 3)), np.zeros((3, 3)), [0.5, 0.5, 0.5])
    assert len(filter_by_confidence(c, 0.8)) == 0
    obj = np.arange(9.0).reshape(3, 3)
    c = CorrespondenceSet(obj, obj, [0.9, 0.79, 0.81])
    np.testing.assert_array_equal(filter_by_confidence(c, 0.8).object_points, obj[[0, 2]])
    # strict inequality
    assert len(filter_by_confidence(CorrespondenceSet(obj, obj, [0.8, 0.8, 0.8]), 0.8)) == 0


def test_correspondence_validation():
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 3)), np.zeros((2, 3)), [1, 1, 1])
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((1, 3)), np.zeros((1, 3)), [1.5])
    with pytest.raises(ValueError):
        FitConfig(confidence_threshold=1.1)
    with pytest.raises(ValueError):
        FitConfig(inlier_threshold=0.0)


def test_lsq_examples():
    rng = np.random.default_rng(0)
    T = rand_pose(rng)
    obj = rng.normal(size=(3, 3))
    est = least_squares_fit(CorrespondenceSet(obj, T.apply(obj), np.ones(3)))
    assert est.allclose(T, 1e-9)
    obj = rng.normal(size=(20, 3))
    assert least_squares_fit(CorrespondenceSet(obj, obj, np.ones(20))).allclose(RigidTransform.identity(), 1e-12)
    with pytest.raises(FitError, match="insufficient correspondences"):
        least_squares_fit(CorrespondenceSet(obj[:2], obj[:2], np.ones(2)))
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(FitError, match="degenerate configuration"):
        least_squares_fit(CorrespondenceSet(line, line, np.ones(10)))


def test_lsq_noise_recovery():
    errs = []
    for s in range(20):
        rng = np.random.default_rng(s)
        T = rand_pose(rng)
        obj = rng.uniform(-0.05, 0.05, size=(100, 3))
        scene = T.apply(obj) + rng.normal(scale=0.001, size=(100, 3))
        est = least_squares_fit(CorrespondenceSet(obj, scene, np.ones(100)))
        errs.append(add(EvaluationInstance(obj, T, est)))
    assert max(errs) < 0.001


def test_lsq_matches_horn_weighted():
    rng = np.random.default_rng(1)
    for _ in range(50):
        T = rand_pose(rng)
        obj = rng.normal(size=(40, 3))
        scene = T.apply(obj) + rng.normal(scale=0.05, size=(40, 3))
        w = rng.uniform(0.1, 2.0, 40)
        est = least_squares_fit(CorrespondenceSet(obj, scene, np.ones(40)), weights=w)
        R, t = horn_fit(obj, scene, w)
        np.testing.assert_allclose(est.rotation, R, atol=1e-9)
        np.testing.assert_allclose(est.translation, t, atol=1e-9)


def test_lsq_planar_reflection_corrected():
    rng = np.random.default_rng(2)
    obj = rng.normal(size=(30, 3))
    obj[:, 2] = 0.0
    mirror = obj * [1.0, 1.0, -1.0]  # identical points but the best orthogonal map could be a reflection
    est = least_squares_fit(CorrespondenceSet(obj, mirror, np.ones(30)))
    assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)
    # noisy planar-ish scene mirrored through z: optimum rotation is still proper
    scene = obj.copy()
    scene[:, 2] = rng.normal(scale=1e-3, size=30)
    scene = scene * [1.0, 1.0, -1.0]
    est = least_squares_fit(CorrespondenceSet(obj, scene, np.ones(30)))
    assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lsq_equivariance(seed):
    rng = np.random.default_rng(seed)
    obj = rng.normal(size=(12, 3))
    scene = rng.normal(size=(12, 3))
    base = least_squares_fit(CorrespondenceSet(obj, scene, np.ones(12)))
    Q = rand_pose(rng)
    moved = least_squares_fit(CorrespondenceSet(obj, Q.apply(scene), np.ones(12)))
    assert moved.allclose(Q @ base, 1e-9)


# -- RANSAC / PROSAC ----------------------------------------------------------


def outlier_set(seed, K=1000, ratio=0.3, sigma=0.001, cube=1.0, conf=None):
    """10 cm object; inliers with Gaussian noise, outliers uniform in a cube."""
    rng = np.random.default_rng(seed)
    T = RigidTransform(rand_pose(rng).rotation, [0.0, 0.0, 0.6])
    n_in = math.ceil(ratio * K)
    obj = rng.uniform(-0.05, 0.05, size=(K, 3))
    scene = T.apply(obj)
    scene[:n_in] += rng.normal(scale=sigma, size=(n_in, 3))
    scene[n_in:] = T.translation + rng.uniform(-cube / 2, cube / 2, size=(K - n_in, 3))
    if conf is None:
        c = np.ones(K)
    else:
        c = np.concatenate([rng.uniform(*conf[0], n_in), rng.uniform(*conf[1], K - n_in)])
    perm = rng.permutation(K)
    return CorrespondenceSet(obj[perm], scene[perm], c[perm]), T, obj


@pytest.mark.parametrize("method", [ransac_fit, prosac_fit])
def test_exact_inliers(method):
    rng = np.random.default_rng(3)
    T = rand_pose(rng)
    corr = exact_set(rng, T, 200)
    res = method(corr, FitConfig(seed=1))
    assert res.pose.allclose(T, 1e-9)
    assert res.n_inliers == 200
    three = exact_set(rng, T, 3)
    res = method(three, FitConfig(seed=1))
    assert res.pose.allclose(T, 1e-9) and res.iterations_used == 1


def test_ransac_thirty_percent_one_metre_cube():
    ok = 0
    for s in range(100):
        corr, T, obj = outlier_set(s)
        res = ransac_fit(corr, FitConfig(seed=s))
        ok += add(EvaluationInstance(obj, T, res.pose)) < 0.005
    assert ok >= 95


def test_reported_inliers_obey_threshold():
    for method in (ransac_fit, prosac_fit):
        for s in range(5):
            corr, T, obj = outlier_set(s, conf=((0.5, 1.0), (0.0, 0.6)))
            cfg = FitConfig(seed=s)
            res = method(corr, cfg)
            r = np.linalg.norm(res.pose.apply(corr.object_points[res.inlier_indices]) - corr.scene_points[res.inlier_indices], axis=1)
            assert np.all(r <= cfg.inlier_threshold)
            assert res.inlier_rms <= cfg.inlier_threshold * (1 + 1e-9)
            assert len(np.unique(res.inlier_indices)) == res.n_inliers


def test_determinism():
    corr, _, _ = outlier_set(4, conf=((0.9, 1.0), (0.0, 0.5)))
    for method in (ransac_fit, prosac_fit):
        a, b = method(corr, FitConfig(seed=9)), method(corr, FitConfig(seed=9))
        assert np.array_equal(a.pose.as_matrix(), b.pose.as_matrix())
        assert np.array_equal(a.inlier_indices, b.inlier_indices) and a.iterations_used == b.iterations_used


def test_fit_failed():
    rng = np.random.default_rng(5)
    corr = CorrespondenceSet(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)), np.ones(50))
    for method in (ransac_fit, prosac_fit):
        with pytest.raises(FitError, match="fit failed"):
            method(corr, FitConfig(inlier_threshold=1e-9, max_iterations=200))
        with pytest.raises(FitError, match="insufficient correspondences"):
            method(corr.subset([0, 1]), FitConfig())
    line = np.outer(np.linspace(0, 1, 10), [1.0, 0.0, 0.0])
    with pytest.raises(FitError, match="fit failed"):
        ransac_fit(CorrespondenceSet(line, line, np.ones(10)), FitConfig(max_iterations=50))


def test_prosac_equal_confidences_matches_ransac():
    rng = np.random.default_rng(6)
    corr = exact_set(rng, rand_pose(rng), 300)
    for s in range(5):
        assert prosac_fit(corr, FitConfig(seed=s)).n_inliers == ransac_fit(corr, FitConfig(seed=s)).n_inliers == 300


def test_prosac_monotone_best(monkeypatch):
    seen = []
    orig = fitting._Best.offer

    def spy(self, R, t, res, thr, iteration):
        seen.append(int((res <= thr).sum()))
        return orig(self, R, t, res, thr, iteration)

    monkeypatch.setattr(fitting._Best, "offer", spy)
    for s in range(5):
        seen.clear()
        corr, _, _ = outlier_set(s, conf=((0.6, 1.0), (0.0, 0.7)))
        res = prosac_fit(corr, FitConfig(seed=s))
        assert res.n_inliers >= max(seen)


def test_prosac_fewer_iterations_than_ransac():
    p_best, r_best, p_used, r_used = [], [], [], []
    for s in range(100):
        corr, _, _ = outlier_set(s, conf=((0.9, 1.0), (0.0, 0.5)))
        cfg = FitConfig(confidence_threshold=0.0, seed=s)
        p, r = prosac_fit(corr, cfg), ransac_fit(corr, cfg)
        p_best.append(p.best_iteration)
        r_best.append(r.best_iteration)
        p_used.append(p.iterations_used)
        r_used.append(r.iterations_used)
    assert np.median(p_best) < np.median(r_best)
    assert np.median(p_used) <= np.median(r_used)


def test_prosac_schedule_reaches_uniform():
    # uninformative ordering (outliers ranked first) still converges
    corr, T, obj = outlier_set(7, conf=((0.0, 0.3), (0.7, 1.0)))
    res = prosac_fit(corr, FitConfig(confidence_threshold=0.0, seed=7))
    assert add(EvaluationInstance(obj, T, res.pose)) < 0.005


def test_min_support_monotone():
    ms = fitting._min_support(1000)
    assert np.all(np.diff(ms) >= 0)
    assert ms[3] == 3 and ms[1000] < 1000
