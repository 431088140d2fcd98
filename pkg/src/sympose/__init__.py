"""Symmetry-aware 6D pose evaluation and correspondence-based pose fitting."""

from ._version import __version__
from .errors import AmbiguityError, DegenerateDataError, FitError, GeometryError, ParseError, SymposeError
from .geometry import (
    CameraIntrinsics,
    ColoredPointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    compose,
    mesh_diagonal,
    orthonormalize,
    random_rotation,
    rotation_about_axis,
    sample_mesh_surface,
    voxel_downsample,
)
from .metrics import (
    NO_SYMMETRY,
    ContinuousAxis,
    EvaluationInstance,
    EvaluationReport,
    MetricConfig,
    SymmetryAnnotation,
    acpd,
    add,
    add_s,
    auc,
    compute_metric,
    evaluate_batch,
    expand_equivalent_poses,
    iadd,
)
from .fitting import CorrespondenceSet, FitConfig, FitResult, filter_by_confidence, least_squares_fit, prosac_fit, ransac_fit
from .segmentation import Heatmap2D, SegmentResult, refine_segmentation

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
