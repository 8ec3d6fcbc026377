"""Force-aware mosaic reconstruction of contact-deformed surface scans.

Reconstructs the undeformed surface and the scanner travel path from a
sequence of contact-deformed images plus per-frame four-point force
measurements. A bundled synthetic phantom simulator provides ground truth.
"""

from .calibration import (
    HookeCalibrator,
    YoungsModulusCalibrator,
    calibrate_hooke,
    calibrate_youngs,
)
from .core import (
    CameraIntrinsics,
    ForceSample,
    Image,
    MaterialParams,
    Pose,
    project_homogeneous,
)
from .features import (
    AsiftConfig,
    AsiftDetector,
    Feature,
    asift_schedule,
    detect_asift,
    detect_sift,
    match_asift,
    match_features,
    tilt_from_angle,
)
from .force import (
    ForceRectifier,
    LoadField,
    TiltState,
    depth_deviation_field,
    lateral_strain,
    load_field,
    rectify_frame,
    rectify_image,
    tilt_angles,
    tilt_normal,
    total_force,
)
from .pipeline import (
    Mosaic,
    PathEstimate,
    PathMetrics,
    SurfaceReconstructor,
    path_metrics,
    reconstruct,
    stitch,
)
from .pose import (
    FundamentalMatrix,
    RansacResult,
    correct_pose,
    eight_point,
    estimate_plane_pose,
    ransac_fundamental,
    recover_pose,
    reproject,
)
from .simulator import (
    ScanScript,
    generate_dataset,
    generate_phantom,
    loop_script,
    raster_script,
    render_frame,
)

__version__ = "0.1.0"

__all__ = [
    "AsiftConfig",
    "AsiftDetector",
    "CameraIntrinsics",
    "Feature",
    "ForceRectifier",
    "ForceSample",
    "FundamentalMatrix",
    "HookeCalibrator",
    "Image",
    "LoadField",
    "MaterialParams",
    "Mosaic",
    "PathEstimate",
    "PathMetrics",
    "Pose",
    "RansacResult",
    "ScanScript",
    "SurfaceReconstructor",
    "TiltState",
    "YoungsModulusCalibrator",
    "asift_schedule",
    "calibrate_hooke",
    "calibrate_youngs",
    "correct_pose",
    "depth_deviation_field",
    "detect_asift",
    "detect_sift",
    "eight_point",
    "estimate_plane_pose",
    "generate_dataset",
    "generate_phantom",
    "lateral_strain",
    "load_field",
    "loop_script",
    "match_asift",
    "match_features",
    "path_metrics",
    "project_homogeneous",
    "ransac_fundamental",
    "raster_script",
    "reconstruct",
    "recover_pose",
    "rectify_frame",
    "rectify_image",
    "render_frame",
    "reproject",
    "stitch",
    "tilt_angles",
    "tilt_from_angle",
    "tilt_normal",
    "total_force",
]
