"""Closed-form ground depth from camera calibration, slope supervision and depth evaluation."""

from .blendloss import (
    LossBreakdown,
    blend_depth,
    regression_loss,
    slope_classification_loss,
    total_loss,
)
from .camera import (
    CameraModel,
    build_camera,
    intrinsics_matrix,
    project,
    ray_point,
    rescale_intrinsics,
    unproject_depth_map,
)
from .errors import FormatError, GroundDepthError, NumericError, ValidationError
from .groundgeom import (
    SENTINEL,
    SlopeBinning,
    SlopeLabel,
    SlopeMap,
    SparseDepth,
    ground_consistency_mask,
    planar_ground_depth,
    slope_from_depth,
    slope_histogram,
    slope_labels_from_sparse,
    soft_slope,
    undulated_ground_depth,
)
from .metrics import (
    GARG_CROP,
    MetricReport,
    apply_eval_crop,
    binned_metrics,
    depth_metrics_2d,
    pointcloud_f_iou,
)
from .oracle import (
    OracleScene,
    TerrainProfile,
    oracle_ground_depth,
    oracle_slope_map,
    oracle_sparse_samples,
)

__version__ = "0.1.0"
