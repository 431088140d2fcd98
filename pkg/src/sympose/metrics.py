"""Pose-error metrics for objects with any kind of pose ambiguity.

ADD compares a prediction against one ground-truth pose, ADD-S matches each
predicted point to its nearest ground-truth point, ACPD takes the minimum ADD
over a finite set of equivalent ground-truth poses and IADD extends that to
infinite sets:

* no rotational symmetry:       IADD = ADD
* finite symmetries:            IADD = ACPD
* continuous symmetry axis:     minimum over ``n`` sampled angles per axis
* textureless sphere:           distance between the two sphere centers
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AmbiguityError, GeometryError
from .geometry import (
    ColoredPointCloud,
    RigidTransform,
    compose,
    rotation_about_axis,
)

METRICS = ("add", "adds", "acpd", "iadd")
MAX_EXPANDED_POSES = 1_000_000
DEDUP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ContinuousAxis:
    direction: np.ndarray
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        d = np.array(self.direction, dtype=np.float64).reshape(3)
        p = np.array(self.point, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise GeometryError(f"axis direction must be unit length, got norm {np.linalg.norm(d):.12g}")
        d.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "point", p)

    def transform(self, angle: float) -> RigidTransform:
        return rotation_about_axis(self.direction, self.point, angle)


@dataclass(frozen=True, eq=False)
class SymmetryAnnotation:
    """Object-frame self-maps that leave the object's appearance unchanged.

    ``discrete`` excludes the identity. When ``is_textureless_sphere`` is set the
    other fields are ignored and the sphere is centered at ``sphere_center``
    (object frame, default the origin).
    """

    discrete: tuple = ()
    continuous_axes: tuple = ()
    is_textureless_sphere: bool = False
    sphere_center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "discrete", tuple(self.discrete))
        object.__setattr__(self, "continuous_axes", tuple(self.continuous_axes))
        c = np.array(self.sphere_center, dtype=np.float64).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "sphere_center", c)

    @property
    def case(self) -> int:
        """Which of the four ambiguity cases applies (1 = none ... 4 = sphere)."""
        if self.is_textureless_sphere:
            return 4
        if self.continuous_axes:
            return 3
        if self.discrete:
            return 2
        return 1

    @property
    def is_finite(self) -> bool:
        return self.case <= 2


NO_SYMMETRY = SymmetryAnnotation()


@dataclass(frozen=True)
class MetricConfig:
    n_axis_samples: int = 360
    metric_set: tuple = METRICS
    # Golden-section polish of the best sampled angle (single-axis case only).
    refine_axis: bool = False

    def __post_init__(self):
        if self.n_axis_samples < 2:
            raise ValueError("n_axis_samples must be >= 2")
        unknown = set(self.metric_set) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics: {sorted(unknown)}")


@dataclass(frozen=True, eq=False)
class EvaluationInstance:
    """One object in one scene. ``pred_pose=None`` marks a missing detection."""

    object_points: ColoredPointCloud
    gt_pose: RigidTransform
    pred_pose: RigidTransform | None
    symmetry: SymmetryAnnotation = NO_SYMMETRY
    scene_id: str = ""
    object_id: str = ""

    def __post_init__(self):
        if not isinstance(self.object_points, ColoredPointCloud):
            object.__setattr__(self, "object_points", ColoredPointCloud(np.asarray(self.object_points)))
        if len(self.object_points) == 0:
            raise GeometryError("object_points must be non-empty")

    @property
    def points(self) -> np.ndarray:
        return self.object_points.positions


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b, axis=1).mean())


def _add_to(pred_pts: np.ndarray, pts: np.ndarray, gt: RigidTransform) -> float:
    return _mean_dist(pred_pts, gt.apply(pts))


def _pred_points(inst: EvaluationInstance) -> np.ndarray:
    if inst.pred_pose is None:
        raise ValueError("instance has no prediction")
    return inst.pred_pose.apply(inst.points)


def add(inst: EvaluationInstance) -> float:
    """Mean distance between corresponding model points under the two poses."""
    return _add_to(_pred_points(inst), inst.points, inst.gt_pose)


def add_s(inst: EvaluationInstance) -> float:
    """Mean distance from each predicted point to the nearest ground-truth point.

    Not symmetric in its pose arguments; the k-d tree search is exact.
    """
    gt_pts = inst.gt_pose.apply(inst.points)
    dist, _ = cKDTree(gt_pts).query(_pred_points(inst), k=1)
    return float(np.mean(dist))


def _grid(n: int) -> list[float]:
    angles = [-math.pi + (2.0 * math.pi * k) / n for k in range(n)]
    # The identity always belongs to the ground-truth set; odd n would skip it.
    if min(abs(a) for a in angles) > 1e-12:
        angles.append(0.0)
    return angles


def _dedupe(poses: list[RigidTransform], tol: float = DEDUP_TOL) -> list[RigidTransform]:
    if len(poses) < 2:
        return poses
    flat = np.array([np.concatenate([p.rotation.ravel(), p.translation]) for p in poses])
    tree = cKDTree(flat)
    removed = np.zeros(len(poses), dtype=bool)
    keep = []
    for i, nbrs in enumerate(tree.query_ball_point(flat, r=tol, p=np.inf)):
        if removed[i]:
            continue
        keep.append(poses[i])
        for j in nbrs:
            if j > i:
                removed[j] = True
    return keep


def expand_equivalent_poses(gt: RigidTransform, sym: SymmetryAnnotation, n: int = 360) -> list[RigidTransform]:
    """All ground-truth poses equivalent to ``gt`` under ``sym``.

    Each discrete symmetry ``S`` (plus the identity) yields ``gt ∘ S``, further
    composed with ``n`` rotations at angles ``-pi + 2*pi*k/n`` about every
    continuous axis. Near-duplicates (1e-9) are dropped, keeping first occurrence.
    """
    if sym.is_textureless_sphere:
        raise AmbiguityError("no finite expansion exists")
    bases = [RigidTransform.identity(), *sym.discrete]
    grids = [[ax.transform(a) for a in _grid(n)] for ax in sym.continuous_axes]
    total = len(bases) * math.prod(len(g) for g in grids)
    if total > MAX_EXPANDED_POSES:
        raise AmbiguityError(f"expansion of {total} poses exceeds cap {MAX_EXPANDED_POSES}")
    out = []
    for S in bases:
        head = compose(gt, S)
        for combo in itertools.product(*grids):
            pose = head
            for A in combo:
                pose = compose(pose, A)
            out.append(pose)
    return _dedupe(out)


def acpd(inst: EvaluationInstance) -> float:
    """Minimum ADD over the finite set of equivalent ground-truth poses."""
    if not inst.symmetry.is_finite:
        raise AmbiguityError("infinite ground-truth set; use IADD")
    pred = _pred_points(inst)
    return min(_add_to(pred, inst.points, g) for g in expand_equivalent_poses(inst.gt_pose, inst.symmetry))


def _golden_min(f, lo: float, hi: float, iters: int = 60) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return min(fc, fd)


def iadd(inst: EvaluationInstance, cfg: MetricConfig = MetricConfig()) -> float:
    """Infimum of ADD over every ground-truth pose equivalent to ``gt_pose``."""
    sym = inst.symmetry
    case = sym.case
    if case == 1:
        return add(inst)
    if case == 2:
        return acpd(inst)
    if case == 4:
        c = sym.sphere_center
        return float(np.linalg.norm(inst.pred_pose.apply(c) - inst.gt_pose.apply(c)))
    pred = _pred_points(inst)
    pts = inst.points
    poses = expand_equivalent_poses(inst.gt_pose, sym, cfg.n_axis_samples)
    values = [_add_to(pred, pts, g) for g in poses]
    best = min(values)
    if cfg.refine_axis and len(sym.continuous_axes) == 1:
        axis = sym.continuous_axes[0]
        step = 2.0 * math.pi / cfg.n_axis_samples
        for S in (RigidTransform.identity(), *sym.discrete):
            head = compose(inst.gt_pose, S)

            def f(theta, head=head):
                return _add_to(pred, pts, compose(head, axis.transform(theta)))

            grid = _grid(cfg.n_axis_samples)
            theta0 = min(grid, key=f)
            best = min(best, _golden_min(f, theta0 - step, theta0 + step))
    return best


def auc(errors, d_max: float) -> float:
    """Area under the accuracy-vs-threshold curve on [0, d_max], normalized to [0, 1].

    The curve is a step function, so the integral is exact: each error ``e``
    contributes ``max(0, 1 - e / d_max)``. Missing detections are ``inf``.
    """
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise ValueError("errors must be non-empty")
    if np.any(np.isnan(e)) or np.any(e < 0):
        raise ValueError("errors must be non-negative numbers")
    contrib = np.clip(1.0 - e / d_max, 0.0, 1.0)
    return math.fsum(contrib.tolist()) / e.size


def compute_metric(name: str, inst: EvaluationInstance, cfg: MetricConfig = MetricConfig()) -> float:
    """Error for one metric; ``inf`` for a missing prediction, ``nan`` for ACPD on infinite sets."""
    if inst.pred_pose is None:
        return math.inf
    if name == "add":
        return add(inst)
    if name == "adds":
        return add_s(inst)
    if name == "acpd":
        return acpd(inst) if inst.symmetry.is_finite else math.nan
    if name == "iadd":
        return iadd(inst, cfg)
    raise ValueError(f"unknown metric {name!r}")


@dataclass
class InstanceResult:
    scene_id: str
    object_id: str
    errors: dict


@dataclass
class EvaluationReport:
    metrics: tuple
    instances: list
    auc: dict
    auc_per_object: dict
    config: dict = field(default_factory=dict)
    version: str = ""

    def errors(self, metric: str) -> list[float]:
        return [r.errors[metric] for r in self.instances]


def _summaries(results, metrics, d_max):
    overall, per_object = {}, {}
    for m in metrics:
        by_obj: dict = {}
        contrib = []
        for r in results:
            e = r.errors[m]
            if math.isnan(e):
                continue
            c = auc([e], d_max[r.object_id])
            by_obj.setdefault(r.object_id, []).append(c)
            contrib.append(c)
        overall[m] = math.fsum(contrib) / len(contrib) if contrib else None
        per_object[m] = {o: math.fsum(v) / len(v) for o, v in sorted(by_obj.items())}
    return overall, per_object


def evaluate_batch(
    instances,
    cfg: MetricConfig = MetricConfig(),
    per_object_d_max: dict | None = None,
    workers: int = 1,
    version: str = "",
) -> EvaluationReport:
    """Per-instance errors for every metric in ``cfg`` plus AUC summaries.

    Overall AUC averages every instance's step-function integral with its
    object's ``d_max``. Results do not depend on ``workers``.
    """
    instances = list(instances)
    per_object_d_max = per_object_d_max or {}
    for inst in instances:
        if inst.object_id not in per_object_d_max:
            raise KeyError(f"no d_max for object id {inst.object_id!r}")
    metrics = tuple(m for m in METRICS if m in cfg.metric_set)

    def run(inst):
        return InstanceResult(inst.scene_id, inst.object_id, {m: compute_metric(m, inst, cfg) for m in metrics})

    if workers > 1 and len(instances) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, instances))
    else:
        results = [run(i) for i in instances]
    overall, per_object = _summaries(results, metrics, per_object_d_max)
    config = {"n_axis_samples": cfg.n_axis_samples, "metrics": list(metrics), "refine_axis": cfg.refine_axis}
    return EvaluationReport(metrics, results, overall, per_object, config, version)
