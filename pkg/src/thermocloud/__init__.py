"""Thermal/RGB rig calibration, metric scale recovery and thermal texturing
of dense structure-from-motion point clouds."""

from .errors import ThermocloudError, ParseError, GeometryError
from .geometry import (
    CameraIntrinsics,
    CameraView,
    Pixel,
    RigidTransform,
    SimilarityTransform,
    UnitQuaternion,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraView",
    "GeometryError",
    "ParseError",
    "Pixel",
    "RigidTransform",
    "SimilarityTransform",
    "ThermocloudError",
    "UnitQuaternion",
    "__version__",
]
