"""Visual-inertial odometry over a ground plane: corner-flow homography
measurements fused with IMU propagation in an error-state EKF."""
from . import errors, evaluation, geometry, imaging, simulator, uncertainty
from .ekf import EkfState, FilterConfig, FlowMeasurement, ImuSample
from .geometry import CameraIntrinsics, CornerFlow, FlowCovariance, Homography

__version__ = "0.1.0"

__all__ = ["errors", "evaluation", "geometry", "imaging", "simulator", "uncertainty",
           "EkfState", "FilterConfig", "FlowMeasurement", "ImuSample", "CameraIntrinsics",
           "CornerFlow", "FlowCovariance", "Homography", "__version__"]
