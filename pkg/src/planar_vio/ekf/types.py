from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..geometry import CameraIntrinsics, CornerFlow, NORMALIZED
from ..rotation import quat_normalize

# error-state layout
IDX_P = slice(0, 3)
IDX_TH = slice(3, 6)
IDX_V = slice(6, 9)
IDX_BA = slice(9, 12)
IDX_BG = slice(12, 15)
IDX_F = slice(15, 23)
ERROR_DIM = 23
CORE_DIM = 15
NOMINAL_DIM = 24


def _vec(x, n):
    a = np.array(x, dtype=float).reshape(n)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EkfState:
    """Nominal filter state.

    ``p`` and ``v`` are expressed in the IMU frame, ``q`` rotates IMU-frame
    vectors into the world frame and ``f`` is the (4, 2) corner flow on the
    z=1 plane accumulated since the last processed frame.
    """
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray
    f: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p, 3))
        object.__setattr__(self, "q", _vec(self.q, 4))
        object.__setattr__(self, "v", _vec(self.v, 3))
        object.__setattr__(self, "b_a", _vec(self.b_a, 3))
        object.__setattr__(self, "b_g", _vec(self.b_g, 3))
        f = np.array(self.f, dtype=float).reshape(4, 2)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-6:
            raise ValueError("quaternion must be unit norm")

    @classmethod
    def from_vector(cls, x):
        """State from a 24-d nominal vector; the quaternion is renormalized.

        Fields are read-only views of one private copy (this sits on the
        per-IMU-sample path, so it skips the per-field copies).
        """
        x = np.array(x, dtype=float).reshape(NOMINAL_DIM)
        x[3:7] = quat_normalize(x[3:7])
        if not np.all(np.isfinite(x)):
            return cls(x[0:3], x[3:7], x[7:10], x[10:13], x[13:16], x[16:24])
        x.setflags(write=False)
        obj = object.__new__(cls)
        for name, sl in (("p", slice(0, 3)), ("q", slice(3, 7)), ("v", slice(7, 10)),
                         ("b_a", slice(10, 13)), ("b_g", slice(13, 16))):
            object.__setattr__(obj, name, x[sl])
        object.__setattr__(obj, "f", x[16:24].reshape(4, 2))
        return obj

    def to_vector(self):
        return np.concatenate([self.p, self.q, self.v, self.b_a, self.b_g, self.f.ravel()])

    @property
    def flow(self):
        return CornerFlow(self.f, NORMALIZED)

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    a_m: np.ndarray
    w_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_m", _vec(self.a_m, 3))
        object.__setattr__(self, "w_m", _vec(self.w_m, 3))


@dataclass(frozen=True, eq=False)
class FlowMeasurement:
    """Frontend output for one frame: 8-d pixel flow and its 8x8 covariance.

    With ``used_prior`` set, ``z`` is a residual measured on an image
    pre-warped by the filter's a-priori flow.
    """
    t: float
    z: np.ndarray
    r_net: np.ndarray
    used_prior: bool = False

    def __post_init__(self):
        object.__setattr__(self, "z", _vec(self.z, 8))
        r = np.array(self.r_net, dtype=float)
        if r.shape == (8,):
            r = np.diag(r)
        if r.shape != (8, 8):
            raise ValueError("r_net must be 8 variances or an 8x8 matrix")
        r.setflags(write=False)
        object.__setattr__(self, "r_net", r)


@dataclass(frozen=True, eq=False)
class FilterConfig:
    """Static filter parameters.

    Noise densities are continuous-time: ``sigma_acc`` [m/s^2/sqrt(Hz)],
    ``sigma_gyro`` [rad/s/sqrt(Hz)], bias random walks ``sigma_acc_bias``
    [m/s^3/sqrt(Hz)] and ``sigma_gyro_bias`` [rad/s^2/sqrt(Hz)], position
    integration noise ``sigma_pos`` [m/s/sqrt(Hz)].  Defaults are typical MEMS
    datasheet values.
    """
    intrinsics: CameraIntrinsics = CameraIntrinsics(200.0, 200.0, 159.5, 111.5, 320, 224)
    R_CI: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_IC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: float = 9.81
    sigma_acc: float = 2.0e-3
    sigma_gyro: float = 1.7e-4
    sigma_acc_bias: float = 3.0e-3
    sigma_gyro_bias: float = 2.0e-5
    sigma_pos: float = 0.0
    k_var: float = 1.0
    gate: bool = False
    gate_prob: float = 0.999
    z_axis_up: bool = False
    init_sigma_pos: float = 0.01
    init_sigma_att: float = 0.01
    init_sigma_vel: float = 0.05
    init_sigma_acc_bias: float = 0.05
    init_sigma_gyro_bias: float = 0.005
    flow_reset_eps: float = 1e-12
    max_substep: float = 0.005
    initial_height: float = 1.0
    init_window: float = 0.5
    stationary_threshold: float = 0.05

    def __post_init__(self):
        R = np.array(self.R_CI, dtype=float).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("R_CI must be a rotation matrix")
        R.setflags(write=False)
        object.__setattr__(self, "R_CI", R)
        object.__setattr__(self, "t_IC", _vec(self.t_IC, 3))
        if not self.gravity > 0:
            raise ValueError("gravity must be positive")
        for name in ("sigma_acc", "sigma_gyro", "sigma_acc_bias", "sigma_gyro_bias", "sigma_pos"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.k_var > 0:
            raise ValueError("k_var must be positive")

    def replace(self, **kw):
        return replace(self, **kw)

    @property
    def plane_sign(self):
        return -1.0 if self.z_axis_up else 1.0

    @cached_property
    def gravity_world(self):
        return np.array([0.0, 0.0, self.plane_sign * self.gravity])

    @cached_property
    def corners(self):
        return np.ascontiguousarray(self.intrinsics.corners_normalized)

    @cached_property
    def noise_diag(self):
        """Diagonal of the continuous noise PSD, order (w_a, w_g, w_ba, w_bg, w_p)."""
        s = [self.sigma_acc, self.sigma_gyro, self.sigma_acc_bias, self.sigma_gyro_bias,
             self.sigma_pos]
        return np.repeat(np.square(s), 3)

    @cached_property
    def kernel_params(self):
        return (np.ascontiguousarray(self.R_CI), np.ascontiguousarray(self.t_IC),
                self.gravity_world, self.corners, self.plane_sign, self.noise_diag,
                float(self.max_substep))

    def initial_covariance(self):
        d = np.zeros(ERROR_DIM)
        d[IDX_P] = self.init_sigma_pos ** 2
        d[IDX_TH] = self.init_sigma_att ** 2
        d[IDX_V] = self.init_sigma_vel ** 2
        d[IDX_BA] = self.init_sigma_acc_bias ** 2
        d[IDX_BG] = self.init_sigma_gyro_bias ** 2
        d[IDX_F] = self.flow_reset_eps
        return np.diag(d)
