"""Range camera + thermal infrared camera toolkit.

Models a phase-measuring time-of-flight range camera and a thermal infrared
camera, fuses their frames into 3D thermograms, estimates the unknown
inter-sensor rotation from target observations, and segments moving objects
against a per-pixel background model. A built-in synthetic-scene renderer
provides ground truth for all of it.
"""

from .calibration import (
    CalibrationResult,
    PeakEstimate,
    TargetObservation,
    estimate_rotation,
    locate_peak,
    projection_error,
)
from .container import FrameContainer
from .errors import (
    BehindCameraError,
    ContainerFormatError,
    DegenerateGeometryError,
    DimensionMismatchError,
    InsufficientDataError,
    OutOfFieldError,
)
from .fusion import Extrinsics, FuseReason, Thermogram, fuse, transform_points
from .segmentation import (
    BackgroundModel,
    ForegroundMask,
    build_background,
    flag_invalid,
    foreground_mask,
    update_median,
)
from .simulator import (
    CalibrationTarget,
    GroundTruth,
    MultipathConfig,
    NoiseConfig,
    Plane,
    ScatteringConfig,
    Scene,
    Sphere,
    make_calibration_set,
    render_ir,
    render_tof,
    render_tof_sequence,
)
from .thermal import IrIntrinsics, ThermalFrame, project_to_ir, sample_temperature
from .tof import (
    PointCloud,
    RangeFrame,
    RawTofFrame,
    SPEED_OF_LIGHT,
    TofIntrinsics,
    backproject,
    demodulate,
    phase_for_distance,
    synthesize_buckets,
    unambiguous_range,
    undistort_pixel,
)

__version__ = "0.1.0"

__all__ = [
    "BackgroundModel",
    "BehindCameraError",
    "CalibrationResult",
    "CalibrationTarget",
    "ContainerFormatError",
    "DegenerateGeometryError",
    "DimensionMismatchError",
    "Extrinsics",
    "ForegroundMask",
    "FrameContainer",
    "FuseReason",
    "GroundTruth",
    "InsufficientDataError",
    "IrIntrinsics",
    "MultipathConfig",
    "NoiseConfig",
    "OutOfFieldError",
    "PeakEstimate",
    "Plane",
    "PointCloud",
    "RangeFrame",
    "RawTofFrame",
    "SPEED_OF_LIGHT",
    "ScatteringConfig",
    "Scene",
    "Sphere",
    "TargetObservation",
    "Thermogram",
    "ThermalFrame",
    "TofIntrinsics",
    "backproject",
    "build_background",
    "demodulate",
    "estimate_rotation",
    "flag_invalid",
    "foreground_mask",
    "fuse",
    "locate_peak",
    "make_calibration_set",
    "phase_for_distance",
    "project_to_ir",
    "projection_error",
    "render_ir",
    "render_tof",
    "render_tof_sequence",
    "sample_temperature",
    "synthesize_buckets",
    "transform_points",
    "unambiguous_range",
    "undistort_pixel",
    "update_median",
]
