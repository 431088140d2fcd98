"""Rigid transforms, colored point clouds, triangle meshes and pinhole cameras.

Conventions: lengths are meters, rotations are 3x3 row-major matrices acting
on column vectors (``v -> R @ v + t``), and arrays of points are ``(N, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

ORTHONORMAL_TOL = 1e-9
# Loaders project noisy rotations onto SO(3) but refuse corrections above this.
MAX_ROTATION_CORRECTION = 1e-4


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3): ``v -> rotation @ v + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise GeometryError(f"expected 3x3 rotation and 3-vector, got {R.shape} and {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("non-finite pose")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise GeometryError(f"rotation not orthonormal (|R^T R - I|max = {err:.3g})")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise GeometryError("rotation has det != +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.abs(self.rotation - other.rotation).max() <= atol
            and np.abs(self.translation - other.translation).max() <= atol
        )

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    """``N`` points with RGB colors in [0, 1]; colors default to zero."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.positions)
        if p.ndim != 2 or p.shape[1] != 3:
            raise GeometryError(f"positions must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite point positions")
        if self.colors is None:
            c = _frozen(np.zeros_like(p))
        else:
            c = _frozen(self.colors)
            if c.shape != p.shape:
                raise GeometryError(f"colors shape {c.shape} does not match positions {p.shape}")
            if c.size and (c.min() < 0.0 or c.max() > 1.0):
                raise GeometryError("colors must lie in [0, 1]")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "colors", c)

    def __len__(self):
        return self.positions.shape[0]

    def subset(self, indices) -> "ColoredPointCloud":
        idx = np.asarray(indices, dtype=np.intp)
        return ColoredPointCloud(self.positions[idx], self.colors[idx])

    def as_matrix(self) -> np.ndarray:
        """The ``N x 6`` ``[x y z r g b]`` matrix."""
        return np.hstack([self.positions, self.colors])


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices)
        f = _frozen(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise GeometryError(f"vertices must be (V, 3), got {v.shape}")
        if f.size == 0:
            f = _frozen(np.zeros((0, 3), dtype=np.int64), dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_colors is not None:
            c = _frozen(self.vertex_colors)
            if c.shape != v.shape:
                raise GeometryError("vertex_colors shape does not match vertices")
            if c.size and (c.min() < 0.0 or c.max() > 1.0):
                raise GeometryError("vertex colors must lie in [0, 1]")
            object.__setattr__(self, "vertex_colors", c)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def vertex_cloud(self) -> ColoredPointCloud:
        return ColoredPointCloud(self.vertices, self.vertex_colors)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive integers")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    def project(self, points) -> np.ndarray:
        """Continuous pixel coordinates ``(u, v)`` of camera-frame points."""
        p = np.asarray(points, dtype=np.float64)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)

    def pixel_of(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest pixel ``(col, row)`` of each point, rounding halves up."""
        uv = self.project(points)
        return np.floor(uv[:, 0] + 0.5).astype(np.int64), np.floor(uv[:, 1] + 0.5).astype(np.int64)

    def backproject(self, u, v, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        x = (np.asarray(u, dtype=np.float64) - self.cx) * z / self.fx
        y = (np.asarray(v, dtype=np.float64) - self.cy) * z / self.fy
        return np.stack([x, y, z], axis=-1)


def apply_transform(pose: RigidTransform, cloud: ColoredPointCloud) -> ColoredPointCloud:
    return ColoredPointCloud(pose.apply(cloud.positions), cloud.colors)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    s, c = math.sin(angle), math.cos(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rotation_about_axis(direction, point, angle: float) -> RigidTransform:
    """Rotation by ``angle`` about the line through ``point`` along ``direction``."""
    R = axis_angle_matrix(direction, angle)
    p = np.asarray(point, dtype=np.float64)
    return RigidTransform(R, p - R @ p)


def nearest_rotation(M) -> np.ndarray:
    """Closest proper rotation to ``M`` in Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def orthonormalize(M, max_correction: float = MAX_ROTATION_CORRECTION) -> np.ndarray:
    """Project ``M`` onto SO(3); raise if that moves any entry by more than ``max_correction``."""
    M = np.asarray(M, dtype=np.float64).reshape(3, 3)
    # already a rotation to rounding level: keep it so save/load is the identity
    if np.abs(M.T @ M - np.eye(3)).max() <= 1e-14 and np.linalg.det(M) > 0:
        return M.copy()
    R = nearest_rotation(M)
    corr = np.abs(R - M).max()
    if corr > max_correction:
        raise GeometryError(f"rotation needs correction {corr:.3g} > {max_correction:g}")
    return R


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> ColoredPointCloud:
    """Draw ``n`` points uniformly (area-weighted) over the mesh surface.

    Colors are barycentric interpolations of the vertex colors when present.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    areas = mesh.face_areas()
    total = float(areas.sum()) if areas.size else 0.0
    if not total > 0.0:
        raise GeometryError("degenerate mesh")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    tri = mesh.faces[face]
    pos = np.einsum("ij,ijk->ik", bary, mesh.vertices[tri])
    colors = None
    if mesh.vertex_colors is not None:
        colors = np.clip(np.einsum("ij,ijk->ik", bary, mesh.vertex_colors[tri]), 0.0, 1.0)
    return ColoredPointCloud(pos, colors)


def voxel_downsample(cloud: ColoredPointCloud, voxel: float) -> ColoredPointCloud:
    """Replace the points of each occupied voxel by their centroid and mean color.

    The lattice is anchored at the origin (key = floor(x / voxel)); output is
    ordered by ascending voxel key.
    """
    if not voxel > 0:
        raise GeometryError("voxel size must be positive")
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    k = len(counts)
    pos = np.zeros((k, 3))
    col = np.zeros((k, 3))
    np.add.at(pos, inverse, cloud.positions)
    np.add.at(col, inverse, cloud.colors)
    pos /= counts[:, None]
    col = np.clip(col / counts[:, None], 0.0, 1.0)
    return ColoredPointCloud(pos, col)


def random_rotation(mode: str = "z_axis", seed: int = 0) -> RigidTransform:
    """Random rotation with angle uniform in [-pi, pi).

    ``z_axis`` rotates about +z; ``any_axis`` picks an axis uniformly on the sphere.
    """
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-math.pi, math.pi)
    if mode == "z_axis":
        axis = np.array([0.0, 0.0, 1.0])
    elif mode == "any_axis":
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-12:
            axis = rng.normal(size=3)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return RigidTransform(axis_angle_matrix(axis, angle), np.zeros(3))


def mesh_diagonal(mesh: TriangleMesh) -> float:
    """Length of the diagonal of the vertices' axis-aligned bounding box."""
    v = mesh.vertices
    if len(v) == 0:
        return 0.0
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
