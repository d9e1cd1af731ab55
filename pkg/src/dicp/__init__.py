"""Doppler ICP registration for FMCW LiDAR point clouds."""

from .cloud import (CorrespondenceSet, DopplerPoint, DopplerPointCloud, SpatialIndex, build_index,
                    estimate_normals, match, nearest)
from .errors import (CloudFormatError, ConfigError, DegenerateSystemError, DICPError, MissingDopplerError,
                     RegistrationError)
from .evaluation import EvalReport, compose_relative, evaluate, path_error, rpe
from .objectives import Calibration
from .se3 import RigidTransform, pseudo_exp, pseudo_log
from .solver import Mode, OdometryResult, RegistrationResult, SeedMode, SolverParams, odometry, register

__version__ = "0.1.0"

__all__ = [
    "Calibration", "CloudFormatError", "ConfigError", "CorrespondenceSet", "DICPError", "DegenerateSystemError",
    "DopplerPoint", "DopplerPointCloud", "EvalReport", "MissingDopplerError", "Mode", "OdometryResult",
    "RegistrationError", "RegistrationResult", "RigidTransform", "SeedMode", "SolverParams", "SpatialIndex",
    "build_index", "compose_relative", "estimate_normals", "evaluate", "match", "nearest", "odometry",
    "path_error", "pseudo_exp", "pseudo_log", "register", "rpe",
]
