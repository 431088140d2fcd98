"""Desk-scale synthetic data: z-buffer rendered partial scenes and scored correspondences.

Rendering samples every pixel center; a pixel's 3-D point lies on the ray
through that center, so re-projecting a rendered point (even with depth noise)
lands exactly on the pixel it came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .fitting import CorrespondenceSet
from .geometry import (
    CameraIntrinsics,
    ColoredPointCloud,
    RigidTransform,
    TriangleMesh,
    axis_angle_matrix,
    random_rotation,
)

NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class Placement:
    object_id: str
    pose: RigidTransform


@dataclass(frozen=True)
class SceneSpec:
    placements: tuple
    cam: CameraIntrinsics
    depth_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be >= 0")


@dataclass(frozen=True)
class CorrSpec:
    """``confidence_model`` is ``"oracle"`` or ``("noisy", overlap)``."""

    n_pairs: int
    inlier_ratio: float
    noise_sigma: float = 0.0
    confidence_model: object = "oracle"
    seed: int = 0

    def __post_init__(self):
        if self.n_pairs < 3:
            raise ValueError("n_pairs must be >= 3")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ValueError("inlier_ratio must be in [0, 1]")
        _confidence_overlap(self.confidence_model)


def _confidence_overlap(model) -> float | None:
    if model == "oracle":
        return None
    if isinstance(model, (tuple, list)) and len(model) == 2 and model[0] == "noisy":
        overlap = float(model[1])
        if not 0.0 <= overlap <= 1.0:
            raise ValueError("overlap must be in [0, 1]")
        return overlap
    raise ValueError(f"unknown confidence model {model!r}")


@dataclass
class RenderedScene:
    cloud: ColoredPointCloud
    instance_labels: np.ndarray
    gt: list
    depth: np.ndarray = field(repr=False)
    label_image: np.ndarray = field(repr=False)


# -- primitives ---------------------------------------------------------------


def make_box(size=(0.1, 0.1, 0.1), color=None) -> TriangleMesh:
    """Axis-aligned box centered at the origin, outward-wound faces."""
    sx, sy, sz = (s / 2.0 for s in size)
    v = np.array(
        [[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)],
        dtype=np.float64,
    )
    # vertex index = 4*ix + 2*iy + iz
    f = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    colors = None if color is None else np.tile(np.asarray(color, dtype=np.float64), (8, 1))
    return TriangleMesh(v, np.array(f), colors)


def make_cylinder(radius=0.03, height=0.1, segments=48, color=None) -> TriangleMesh:
    """Capped cylinder along +z, centered at the origin."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = height / 2.0
    bottom = np.hstack([ring, np.full((segments, 1), -h)])
    top = np.hstack([ring, np.full((segments, 1), h)])
    v = np.vstack([bottom, top, [[0, 0, -h], [0, 0, h]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces += [(cb, j, i), (ct, segments + i, segments + j)]
    colors = None if color is None else np.tile(np.asarray(color, dtype=np.float64), (len(v), 1))
    return TriangleMesh(v, np.array(faces), colors)


def make_uv_sphere(radius=0.05, n_lat=16, n_lon=32, color=None) -> TriangleMesh:
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2.0 * np.pi * j / n_lon
            verts.append([radius * np.sin(th) * np.cos(ph), radius * np.sin(th) * np.sin(ph), radius * np.cos(th)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1
    faces = []
    for j in range(n_lon):
        faces.append((0, 1 + j, 1 + (j + 1) % n_lon))
    for i in range(n_lat - 2):
        a, b = 1 + i * n_lon, 1 + (i + 1) * n_lon
        for j in range(n_lon):
            k = (j + 1) % n_lon
            faces += [(a + j, b + j, b + k), (a + j, b + k, a + k)]
    last = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        faces.append((south, last + (j + 1) % n_lon, last + j))
    v = np.array(verts)
    colors = None if color is None else np.tile(np.asarray(color, dtype=np.float64), (len(v), 1))
    return TriangleMesh(v, np.array(faces), colors)


# -- rendering ----------------------------------------------------------------


def rasterize(spec: SceneSpec, meshes: dict):
    """Noise-free z-buffer: returns ``(depth, label_image, color_image)``.

    ``depth`` is ``inf`` and ``label_image`` is -1 where nothing was hit.
    Labels index ``spec.placements``. Faces take the mean of their vertex
    colors; triangles crossing the near plane are skipped.
    """
    cam = spec.cam
    H, W = cam.height, cam.width
    depth = np.full((H, W), np.inf)
    labels = np.full((H, W), -1, dtype=np.int64)
    color = np.zeros((H, W, 3))
    for label, pl in enumerate(spec.placements):
        mesh = meshes[pl.object_id]
        verts = pl.pose.apply(mesh.vertices)
        if mesh.vertex_colors is not None:
            face_col = mesh.vertex_colors[mesh.faces].mean(axis=1)
        else:
            face_col = np.zeros((len(mesh.faces), 3))
        for fi, tri in enumerate(mesh.faces):
            p = verts[tri]
            if np.any(p[:, 2] <= NEAR_PLANE):
                continue
            _raster_triangle(p, cam, depth, labels, color, label, face_col[fi])
    return depth, labels, color


def _raster_triangle(p, cam, depth, labels, color, label, rgb):
    u = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    v = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    u0, u1 = max(0, math.ceil(u.min())), min(cam.width - 1, math.floor(u.max()))
    v0, v1 = max(0, math.ceil(v.min())), min(cam.height - 1, math.floor(v.max()))
    if u0 > u1 or v0 > v1:
        return
    area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
    if abs(area) < 1e-12:
        return
    gu, gv = np.meshgrid(np.arange(u0, u1 + 1, dtype=np.float64), np.arange(v0, v1 + 1, dtype=np.float64))
    w0 = ((u[1] - gu) * (v[2] - gv) - (u[2] - gu) * (v[1] - gv)) / area
    w1 = ((u[2] - gu) * (v[0] - gv) - (u[0] - gu) * (v[2] - gv)) / area
    w2 = 1.0 - w0 - w1
    eps = -1e-12
    inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
    if not inside.any():
        return
    # perspective-correct depth: 1/z is affine in screen space
    inv_z = w0 / p[0, 2] + w1 / p[1, 2] + w2 / p[2, 2]
    z = np.where(inside & (inv_z > 0), 1.0 / np.where(inv_z > 0, inv_z, 1.0), np.inf)
    win = depth[v0 : v1 + 1, u0 : u1 + 1]
    closer = z < win
    if not closer.any():
        return
    win[closer] = z[closer]
    labels[v0 : v1 + 1, u0 : u1 + 1][closer] = label
    color[v0 : v1 + 1, u0 : u1 + 1][closer] = rgb


def render_scene(spec: SceneSpec, meshes: dict) -> RenderedScene:
    """Single-view partial cloud of all placed meshes, one point per covered pixel.

    Points are in row-major pixel order, labeled with their placement index,
    and carry additive Gaussian depth noise along the pixel ray.
    """
    if not spec.placements:
        raise GeometryError("nothing to render")
    missing = [pl.object_id for pl in spec.placements if pl.object_id not in meshes]
    if missing:
        raise KeyError(f"no mesh for object ids {sorted(set(missing))}")
    depth, labels, color = rasterize(spec, meshes)
    rows, cols = np.nonzero(np.isfinite(depth))
    z = depth[rows, cols]
    if spec.depth_noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        z = np.maximum(z + rng.normal(0.0, spec.depth_noise_sigma, size=z.shape), NEAR_PLANE)
    pts = spec.cam.backproject(cols, rows, z)
    cloud = ColoredPointCloud(pts.reshape(-1, 3), color[rows, cols])
    gt = [(pl.object_id, pl.pose) for pl in spec.placements]
    return RenderedScene(cloud, labels[rows, cols], gt, depth, labels)


def visible_indices(points, pose: RigidTransform, label: int, scene: RenderedScene, cam: CameraIntrinsics, tol: float = 0.002) -> np.ndarray:
    """Indices of object-frame ``points`` visible in ``scene`` under ``pose``.

    A point is visible when it projects onto a pixel owned by ``label`` whose
    noise-free depth is within ``tol`` of the point's depth.
    """
    cam_pts = pose.apply(points)
    front = cam_pts[:, 2] > NEAR_PLANE
    out = np.zeros(len(cam_pts), dtype=bool)
    if not front.any():
        return np.flatnonzero(out)
    col, row = cam.pixel_of(cam_pts[front])
    inside = (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    idx = np.flatnonzero(front)[inside]
    col, row = col[inside], row[inside]
    ok = (scene.label_image[row, col] == label) & (np.abs(scene.depth[row, col] - cam_pts[idx, 2]) <= tol)
    out[idx[ok]] = True
    return np.flatnonzero(out)


def synth_correspondences(object_cloud: ColoredPointCloud, gt_pose: RigidTransform, visible, spec: CorrSpec) -> CorrespondenceSet:
    """Scored object-to-scene pairs standing in for a learned matcher.

    ``ceil(inlier_ratio * n)`` pairs map a visible object point to its
    gt-transformed location plus Gaussian noise; the rest pair a random object
    point with a uniform point in the visible region's bounding box inflated
    by 10%. Pairs are shuffled.
    """
    visible = np.asarray(visible, dtype=np.int64).reshape(-1)
    if visible.size == 0:
        raise ValueError("visible_indices must be non-empty")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_pairs
    n_in = min(n, math.ceil(spec.inlier_ratio * n - 1e-9))
    n_out = n - n_in
    pts = object_cloud.positions

    src_in = rng.choice(visible, size=n_in, replace=n_in > len(visible))
    obj_in = pts[src_in]
    scene_in = gt_pose.apply(obj_in) + rng.normal(0.0, spec.noise_sigma, size=(n_in, 3)) if n_in else np.zeros((0, 3))

    vis_scene = gt_pose.apply(pts[visible])
    lo, hi = vis_scene.min(axis=0), vis_scene.max(axis=0)
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    obj_out = pts[rng.integers(0, len(pts), size=n_out)]
    scene_out = lo + (hi - lo) * rng.random((n_out, 3))

    overlap = _confidence_overlap(spec.confidence_model)
    if overlap is None:
        conf_in, conf_out = np.ones(n_in), np.zeros(n_out)
    else:
        conf_in = rng.uniform(1.0 - overlap, 1.0, size=n_in)
        conf_out = rng.uniform(0.0, overlap, size=n_out)

    perm = rng.permutation(n)
    obj = np.vstack([obj_in, obj_out])[perm]
    scene = np.vstack([scene_in.reshape(-1, 3), scene_out])[perm]
    conf = np.concatenate([conf_in, conf_out])[perm]
    return CorrespondenceSet(obj, scene, conf)


def random_scene(object_ids, meshes: dict, cam: CameraIntrinsics, seed: int = 0, depth_noise_sigma: float = 0.0, distance: float = 0.6) -> SceneSpec:
    """Place each object once, side by side at roughly ``distance`` meters.

    Objects get a random orientation and are spaced laterally by their
    bounding diagonal so that none occludes another.
    """
    rng = np.random.default_rng(seed)
    ids = list(object_ids)
    diags = [float(np.linalg.norm(np.ptp(meshes[o].vertices, axis=0))) for o in ids]
    gap = 1.2 * max(diags) if diags else 0.0
    x0 = -0.5 * gap * (len(ids) - 1)
    placements = []
    for i, oid in enumerate(ids):
        rot = random_rotation("any_axis", int(rng.integers(2**31))).rotation
        tilt = axis_angle_matrix([1.0, 0.0, 0.0], rng.uniform(-0.3, 0.3))
        t = np.array([x0 + i * gap, rng.uniform(-0.02, 0.02), distance + rng.uniform(-0.05, 0.05)])
        placements.append(Placement(oid, RigidTransform(tilt @ rot, t)))
    return SceneSpec(tuple(placements), cam, depth_noise_sigma, int(rng.integers(2**31)))
