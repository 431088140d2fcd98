"""Rigid pose from scored 3D correspondences.

``least_squares_fit`` is weighted Kabsch/Umeyama without scale. ``ransac_fit``
and ``prosac_fit`` wrap it in hypothesize-and-verify loops over minimal
three-point samples; PROSAC draws from a growing prefix of the
confidence-sorted correspondences (Chum & Matas, CVPR 2005) and stops early
once the best model is well supported within some prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .errors import FitError
from .geometry import RigidTransform

MIN_SAMPLE = 3
MIN_SAMPLE_AREA = 1e-12  # m^2; thinner sample triangles are redrawn
# PROSAC non-randomness test: chance that an outlier is consistent with a
# wrong model, and the tolerated probability of accepting a random support.
PROSAC_BETA = 0.05
PROSAC_PSI = 0.05


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    object_points: np.ndarray
    scene_points: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        o = np.array(self.object_points, dtype=np.float64).reshape(-1, 3)
        s = np.array(self.scene_points, dtype=np.float64).reshape(-1, 3)
        c = np.array(self.confidences, dtype=np.float64).reshape(-1)
        if not (len(o) == len(s) == len(c)):
            raise ValueError(f"length mismatch: {len(o)} object, {len(s)} scene, {len(c)} confidences")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        for a in (o, s, c):
            a.setflags(write=False)
        object.__setattr__(self, "object_points", o)
        object.__setattr__(self, "scene_points", s)
        object.__setattr__(self, "confidences", c)

    def __len__(self):
        return len(self.confidences)

    def subset(self, indices) -> "CorrespondenceSet":
        idx = np.asarray(indices, dtype=np.intp)
        return CorrespondenceSet(self.object_points[idx], self.scene_points[idx], self.confidences[idx])


@dataclass(frozen=True)
class FitConfig:
    confidence_threshold: float = 0.8
    inlier_threshold: float = 0.010
    max_iterations: int = 20000
    success_confidence: float = 0.999
    local_opt_rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0, 1]")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.success_confidence < 1.0:
            raise ValueError("success_confidence must be in (0, 1)")


@dataclass
class FitResult:
    pose: RigidTransform
    inlier_indices: np.ndarray
    inlier_rms: float
    iterations_used: int
    # 1-based iteration that drew the hypothesis finally selected.
    best_iteration: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_inliers(self) -> int:
        return len(self.inlier_indices)


def filter_by_confidence(corr: CorrespondenceSet, threshold: float = 0.8) -> CorrespondenceSet:
    """Keep pairs whose confidence is strictly above ``threshold``, in order."""
    return corr.subset(np.flatnonzero(corr.confidences > threshold))


def _kabsch(src: np.ndarray, dst: np.ndarray, w: np.ndarray | None = None):
    if w is None:
        cs, cd = src.mean(axis=0), dst.mean(axis=0)
        H = (src - cs).T @ (dst - cd)
    else:
        w = w / w.sum()
        cs, cd = w @ src, w @ dst
        H = ((src - cs) * w[:, None]).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def least_squares_fit(corr: CorrespondenceSet, weights=None) -> RigidTransform:
    """Rotation and translation minimizing ``sum w_i |R o_i + t - s_i|^2``.

    Always returns a proper rotation; for planar point sets the reflection
    optimum is corrected by flipping the weakest singular direction.
    """
    K = len(corr)
    if K < MIN_SAMPLE:
        raise FitError("insufficient correspondences")
    src, dst = corr.object_points, corr.scene_points
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != (K,) or np.any(w < 0) or not w.sum() > 0:
            raise FitError("weights must be K non-negative values with positive sum")
    ww = np.ones(K) / K if w is None else w / w.sum()
    centered = src - ww @ src
    sv = np.linalg.svd(centered * np.sqrt(ww)[:, None], compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
        raise FitError("degenerate configuration")
    R, t = _kabsch(src, dst, w)
    return RigidTransform(R, t)


def _residuals(R, t, corr: CorrespondenceSet) -> np.ndarray:
    return np.linalg.norm(corr.object_points @ R.T + t - corr.scene_points, axis=1)


def _area(p: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))


class _Best:
    """Best hypothesis so far: more inliers wins, ties go to lower RMS."""

    def __init__(self):
        self.count = 0
        self.rms = math.inf
        self.R = None
        self.t = None
        self.mask = None
        self.iteration = 0

    def offer(self, R, t, res, thr, iteration) -> bool:
        mask = res <= thr
        count = int(mask.sum())
        if count == 0:
            return False
        rms = float(np.sqrt(np.mean(res[mask] ** 2)))
        if count > self.count or (count == self.count and rms < self.rms):
            self.count, self.rms, self.R, self.t, self.mask, self.iteration = count, rms, R, t, mask, iteration
            return True
        return False


def _iterations_needed(n_inliers: int, n: int, eta: float) -> float:
    """Samples needed to draw one all-inlier triple with probability ``1 - eta``."""
    if n_inliers < MIN_SAMPLE:
        return math.inf
    p = 1.0
    for j in range(MIN_SAMPLE):
        p *= (n_inliers - j) / (n - j)
    if p >= 1.0:
        return 0.0
    if p <= 0.0:
        return math.inf
    return math.log(eta) / math.log1p(-p)


def _local_optimize(best: _Best, corr: CorrespondenceSet, cfg: FitConfig) -> None:
    for _ in range(cfg.local_opt_rounds):
        idx = np.flatnonzero(best.mask)
        if len(idx) < MIN_SAMPLE:
            return
        try:
            pose = least_squares_fit(corr.subset(idx))
        except FitError:
            return
        R, t = pose.rotation, pose.translation
        if not best.offer(R, t, _residuals(R, t, corr), cfg.inlier_threshold, best.iteration):
            return


def _finish(best: _Best, corr: CorrespondenceSet, cfg: FitConfig, iterations: int, order=None) -> FitResult:
    if best.count < MIN_SAMPLE:
        raise FitError("fit failed")
    _local_optimize(best, corr, cfg)
    idx = np.flatnonzero(best.mask)
    if order is not None:
        idx = np.sort(order[idx])
    return FitResult(
        pose=RigidTransform(best.R, best.t),
        inlier_indices=idx,
        inlier_rms=best.rms,
        iterations_used=iterations,
        best_iteration=best.iteration,
    )


def _draw_uniform(rng, n: int) -> np.ndarray:
    while True:
        s = rng.integers(0, n, size=MIN_SAMPLE)
        if s[0] != s[1] and s[0] != s[2] and s[1] != s[2]:
            return s


def _hypothesis(corr: CorrespondenceSet, sample):
    obj = corr.object_points[sample]
    if _area(obj) < MIN_SAMPLE_AREA:
        return None
    return _kabsch(obj, corr.scene_points[sample])


def ransac_fit(corr: CorrespondenceSet, cfg: FitConfig = FitConfig()) -> FitResult:
    """Uniform-sampling RANSAC with an adaptive iteration bound and local refits."""
    K = len(corr)
    if K < MIN_SAMPLE:
        raise FitError("insufficient correspondences")
    rng = np.random.default_rng(cfg.seed)
    eta = 1.0 - cfg.success_confidence
    best = _Best()
    needed = math.inf
    t = 0
    degenerate = 0
    while t < cfg.max_iterations and t < needed:
        hyp = _hypothesis(corr, _draw_uniform(rng, K))
        if hyp is None:
            degenerate += 1
            if degenerate > 10 * cfg.max_iterations:
                break
            continue
        t += 1
        R, T = hyp
        if best.offer(R, T, _residuals(R, T, corr), cfg.inlier_threshold, t):
            _local_optimize(best, corr, cfg)
            needed = _iterations_needed(best.count, K, eta)
    return _finish(best, corr, cfg, t)


def _min_support(K: int) -> np.ndarray:
    """Smallest inlier count in a prefix of length n that is unlikely to be random."""
    n = np.arange(K + 1)
    trials = np.maximum(n - MIN_SAMPLE, 0)
    # smallest j with P(Binom(n - m, beta) >= j - m) < psi
    j = binom.isf(PROSAC_PSI, trials, PROSAC_BETA)
    out = MIN_SAMPLE + np.nan_to_num(j, nan=0.0).astype(np.int64) + 1
    out[: MIN_SAMPLE + 1] = MIN_SAMPLE
    return out


def prosac_fit(corr: CorrespondenceSet, cfg: FitConfig = FitConfig()) -> FitResult:
    """PROSAC: progressive sampling from the highest-confidence correspondences.

    Correspondences are ranked by confidence (ties by original index). The
    sampling pool grows per the standard schedule derived from
    ``T_N = max_iterations`` and at saturation equals uniform sampling. The
    loop stops once some prefix ``n`` passes the non-randomness test and
    enough samples were drawn to hit an all-inlier triple in it; with
    ``n = K`` this is exactly the RANSAC bound.
    """
    K = len(corr)
    if K < MIN_SAMPLE:
        raise FitError("insufficient correspondences")
    order = np.argsort(-corr.confidences, kind="stable")
    ranked = corr.subset(order)
    rng = np.random.default_rng(cfg.seed)
    eta = 1.0 - cfg.success_confidence
    m = MIN_SAMPLE
    min_support = _min_support(K)

    T_N = float(cfg.max_iterations)
    T_n = T_N
    for i in range(m):
        T_n *= (m - i) / (K - i)
    T_n_prime = 1
    n = m
    n_star = K
    needed = math.inf
    best = _Best()
    t = 0
    degenerate = 0
    while t < cfg.max_iterations and t < needed:
        if t + 1 > T_n_prime and n < n_star:
            T_next = T_n * (n + 1) / (n + 1 - m)
            n += 1
            T_n_prime += math.ceil(T_next - T_n)
            T_n = T_next
        if T_n_prime < t + 1 or n == m:
            sample = _draw_distinct(rng, n, m)
        else:
            head = _draw_distinct(rng, n - 1, m - 1)
            sample = np.append(head, n - 1)
        hyp = _hypothesis(ranked, sample)
        if hyp is None:
            degenerate += 1
            if degenerate > 10 * cfg.max_iterations:
                break
            continue
        t += 1
        R, T = hyp
        if best.offer(R, T, _residuals(R, T, ranked), cfg.inlier_threshold, t):
            _local_optimize(best, ranked, cfg)
            k, size = _prosac_bound(best.mask, min_support, eta)
            if k < math.inf:
                needed, n_star = k, max(size, n)
    return _finish(best, ranked, cfg, t, order=order)


def _prosac_bound(mask: np.ndarray, min_support: np.ndarray, eta: float) -> tuple[float, int]:
    """Fewest samples needed over all prefixes whose support is non-random."""
    K = len(mask)
    sizes = np.arange(MIN_SAMPLE, K + 1)
    inl = np.cumsum(mask)[MIN_SAMPLE - 1 :].astype(np.float64)
    p = np.ones_like(inl)
    for j in range(MIN_SAMPLE):
        p *= np.clip(inl - j, 0.0, None) / (sizes - j)
    ok = (inl >= min_support[MIN_SAMPLE:]) & (p > 0.0)
    if not ok.any():
        return math.inf, K
    with np.errstate(divide="ignore"):
        k = np.where(p >= 1.0, 0.0, math.log(eta) / np.log1p(-np.minimum(p, 1.0)))
    k = np.where(ok, k, np.inf)
    i = int(np.argmin(k))
    return float(k[i]), int(sizes[i])


def _draw_distinct(rng, n: int, k: int) -> np.ndarray:
    while True:
        s = rng.integers(0, n, size=k)
        if len(set(s.tolist())) == k:
            return s
