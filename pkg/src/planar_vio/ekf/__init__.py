"""Error-state EKF backend."""
from .filter import (Estimator, StepTimes, UpdateOutcome, camera_plane_distance,
                     check_covariance, continuous_homography, gravity_alignment, initialize,
                     inject, measurement_in_filter_frame, prior_flow, propagate, reset_flow,
                     update)
from .types import (CORE_DIM, ERROR_DIM, IDX_BA, IDX_BG, IDX_F, IDX_P, IDX_TH, IDX_V,
                    NOMINAL_DIM, EkfState, FilterConfig, FlowMeasurement, ImuSample)

__all__ = [
    "Estimator", "StepTimes", "UpdateOutcome", "camera_plane_distance", "check_covariance",
    "continuous_homography", "gravity_alignment", "initialize", "inject",
    "measurement_in_filter_frame", "prior_flow", "propagate", "reset_flow", "update",
    "CORE_DIM", "ERROR_DIM", "IDX_BA", "IDX_BG", "IDX_F", "IDX_P", "IDX_TH", "IDX_V",
    "NOMINAL_DIM", "EkfState", "FilterConfig", "FlowMeasurement", "ImuSample",
]
