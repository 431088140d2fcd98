"""Heatmap post-processing: project, smooth, Otsu-binarize, keep large blobs, lift.

A per-point object score over a scene cloud is turned into a 2-D heatmap in
the camera image, cleaned up there, and mapped back to point indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateDataError, GeometryError
from .geometry import CameraIntrinsics, ColoredPointCloud

OTSU_BINS = 256


@dataclass(frozen=True, eq=False)
class Heatmap2D:
    values: np.ndarray
    valid_mask: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class SegmentResult:
    point_indices: np.ndarray
    component_count: int


def _pixels(cloud: ColoredPointCloud, cam: CameraIntrinsics):
    pts = cloud.positions
    if len(pts) and np.any(pts[:, 2] <= 0):
        raise GeometryError("point behind camera")
    col, row = cam.pixel_of(pts)
    inside = (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    return col, row, inside


def project_heatmap(cloud: ColoredPointCloud, scores, cam: CameraIntrinsics) -> Heatmap2D:
    """Max-pool point scores into the image; points outside the frame are dropped."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) != len(cloud):
        raise ValueError(f"{len(scores)} scores for {len(cloud)} points")
    col, row, inside = _pixels(cloud, cam)
    values = np.zeros((cam.height, cam.width))
    valid = np.zeros((cam.height, cam.width), dtype=bool)
    np.maximum.at(values, (row[inside], col[inside]), scores[inside])
    valid[row[inside], col[inside]] = True
    return Heatmap2D(values, valid)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(hm: Heatmap2D, sigma: float = 2.0) -> Heatmap2D:
    """Separable Gaussian blur (radius ceil(3 sigma), zero padding).

    The valid mask is dilated by the kernel footprint.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(hm.values, k, axis=0, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, k, axis=1, mode="constant", cval=0.0)
    r = len(k) // 2
    valid = ndimage.binary_dilation(hm.valid_mask, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))
    return Heatmap2D(out, valid)


def histogram(values: np.ndarray, bins: int = OTSU_BINS) -> np.ndarray:
    """Counts of ``values`` in ``bins`` equal bins over [0, 1] (1.0 goes to the last bin)."""
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), 0.0, 1.0)
    idx = np.minimum(np.floor(v * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins)


def otsu_threshold(hm: Heatmap2D) -> float:
    """Otsu threshold over a 256-bin histogram of the valid pixels.

    Candidates are the 255 inner bin boundaries ``k / 256``; pixels at or above
    the returned value form the foreground. Between-class variance is compared
    in exact integer arithmetic (bin centers), ties resolved to the lower boundary.
    """
    counts = histogram(hm.values[hm.valid_mask]).tolist()
    if sum(1 for c in counts if c) < 2:
        raise DegenerateDataError("degenerate histogram")
    # bin center (i + 0.5) / 256 scaled to the odd integer 2i + 1
    total_n = sum(counts)
    total_s = sum(c * (2 * i + 1) for i, c in enumerate(counts))
    best_k, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for k in range(1, OTSU_BINS):
        n0 += counts[k - 1]
        s0 += counts[k - 1] * (2 * (k - 1) + 1)
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * N^2 ∝ (n0 * s1 - n1 * s0)^2 / (n0 * n1)
        num = (n0 * (total_s - s0) - n1 * s0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k / OTSU_BINS


def binarize(hm: Heatmap2D, threshold: float) -> np.ndarray:
    return hm.valid_mask & (hm.values >= threshold)


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(binary, min_size: int = 50) -> np.ndarray:
    """8-connected labeling keeping components of at least ``min_size`` pixels.

    Returns an int label image: 0 is background and labels 1, 2, ... are
    ordered by decreasing size (ties by raster order of first pixel).
    """
    labels, n = ndimage.label(np.asarray(binary, dtype=bool), structure=_EIGHT)
    out = np.zeros(labels.shape, dtype=np.int64)
    if n == 0:
        return out
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    keep = [lab for lab in range(1, n + 1) if sizes[lab - 1] >= min_size]
    keep.sort(key=lambda lab: (-sizes[lab - 1], lab))
    remap = np.zeros(n + 1, dtype=np.int64)
    for new, old in enumerate(keep, start=1):
        remap[old] = new
    return remap[labels]


def lift_mask(cloud: ColoredPointCloud, cam: CameraIntrinsics, mask) -> SegmentResult:
    """Indices of points whose nearest pixel is set in ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cam.height, cam.width):
        raise ValueError(f"mask shape {mask.shape} does not match camera {(cam.height, cam.width)}")
    col, row, inside = _pixels(cloud, cam)
    hit = np.zeros(len(cloud), dtype=bool)
    hit[inside] = mask[row[inside], col[inside]]
    _, count = ndimage.label(mask, structure=_EIGHT)
    return SegmentResult(np.flatnonzero(hit), int(count))


def refine_segmentation(cloud: ColoredPointCloud, scores, cam: CameraIntrinsics, sigma: float = 2.0, min_size: int = 50) -> SegmentResult:
    hm = gaussian_smooth(project_heatmap(cloud, scores, cam), sigma)
    thr = otsu_threshold(hm)
    labels = connected_components(binarize(hm, thr), min_size)
    seg = lift_mask(cloud, cam, labels > 0)
    return SegmentResult(seg.point_indices, int(labels.max()))
