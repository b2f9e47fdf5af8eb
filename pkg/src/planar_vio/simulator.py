"""Synthetic flights over a ground plane: truth, IMU streams and a noisy
corner-flow frontend standing in for the network.

World frame: origin on the plane, z down (gravity +z); the vehicle flies at
z = -height.  Body attitude is Rz(yaw) Ry(pitch) Rx(roll).  Motion starts from
rest: the path parameter ``tau`` stays at 0 for ``settle`` seconds, then its
rate ramps smoothly to 1 over ``ramp`` seconds.
"""
import math
from dataclasses import dataclass

import numpy as np

from .ekf.types import EkfState, FlowMeasurement, ImuSample
from .errors import OutOfRange
from .geometry import (compose_total_flow, flow_to_homography,
                       homography_from_relative_pose, homography_to_flow)
from .rotation import euler_zyx_to_rot, rot_to_quat

KINDS = ("hover", "line", "circle", "figure-eight", "shuttle")
YAW_PROFILES = ("fixed", "rate", "sine")
VARIANCE_FLOOR = 1e-8
Z_FLIP = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic flight description.

    ``amplitude`` is the radius (circle), half-width (figure-eight), distance
    between waypoints (shuttle) or distance covered per ``period`` (line).
    ``yaw_value`` is a constant yaw [rad], a yaw rate [rad/s] or a sine
    amplitude [rad] depending on ``yaw``.  ``tilt`` adds roll/pitch
    oscillations of that amplitude [rad].
    """
    kind: str = "hover"
    amplitude: float = 1.0
    period: float = 10.0
    height: float = 1.0
    yaw: str = "fixed"
    yaw_value: float = 0.0
    tilt: float = 0.0
    duration: float = 60.0
    seed: int = 0
    settle: float = 1.0
    ramp: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.yaw not in YAW_PROFILES:
            raise ValueError(f"unknown yaw profile {self.yaw!r}")
        if not self.height > 0:
            raise ValueError("height must be positive")
        if not self.period > 0:
            raise ValueError("period must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.settle < 0 or self.ramp < 0:
            raise ValueError("settle and ramp must be non-negative")


@dataclass(frozen=True, eq=False)
class TruthSample:
    """Ground truth at time ``t``: world position/velocity/acceleration, body
    attitude (``R`` body->world, quaternion ``q``) and body angular rate."""
    t: float
    p: np.ndarray
    q: np.ndarray
    R: np.ndarray
    v: np.ndarray
    a: np.ndarray
    omega: np.ndarray


@dataclass(frozen=True)
class FrontendNoiseModel:
    """Corner-flow noise: sigma = base_sigma + flow_scale * |flow| per corner,
    replaced by ``outlier_sigma`` with probability ``outlier_prob``.  The
    reported variance is the true one times ``variance_fidelity``."""
    base_sigma: float = 0.5
    flow_scale: float = 0.0
    outlier_prob: float = 0.0
    outlier_sigma: float = 10.0
    variance_fidelity: float = 1.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.base_sigma, self.flow_scale, self.outlier_sigma) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.outlier_prob <= 1.0 or not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("probabilities out of range")
        if not self.variance_fidelity > 0:
            raise ValueError("variance_fidelity must be positive")

    @classmethod
    def noiseless(cls):
        return cls(base_sigma=0.0)


def _time_warp(spec, t):
    """Path parameter and its first two time derivatives (vectorized)."""
    t = np.asarray(t, dtype=float)
    x = np.clip((t - spec.settle) / spec.ramp, 0.0, 1.0) if spec.ramp > 0 else \
        (t >= spec.settle).astype(float)
    if spec.ramp > 0:
        tau_ramp = spec.ramp * (x ** 6 - 3 * x ** 5 + 2.5 * x ** 4)
        rate = 6 * x ** 5 - 15 * x ** 4 + 10 * x ** 3
        accel = np.where((x > 0) & (x < 1), (30 * x ** 4 - 60 * x ** 3 + 30 * x ** 2) / spec.ramp, 0.0)
    else:
        tau_ramp = np.zeros_like(t)
        rate = x
        accel = np.zeros_like(t)
    after = t - spec.settle - spec.ramp
    tau = np.where(after > 0, spec.ramp / 2.0 + after, tau_ramp)
    return tau, rate, accel


def _path(spec, tau):
    """Position and its first two derivatives with respect to tau."""
    A, w = spec.amplitude, 2 * np.pi / spec.period
    z = np.zeros_like(tau)
    h = -spec.height * np.ones_like(tau)
    if spec.kind == "hover":
        P = np.stack([z, z, h], -1)
        return P, np.zeros_like(P), np.zeros_like(P)
    if spec.kind == "line":
        s = A / spec.period
        P = np.stack([s * tau, z, h], -1)
        return P, np.stack([s + z, z, z], -1), np.zeros_like(P)
    if spec.kind == "circle":
        c, sn = np.cos(w * tau), np.sin(w * tau)
        P = np.stack([A * c - A, A * sn, h], -1)
        dP = np.stack([-A * w * sn, A * w * c, z], -1)
        ddP = np.stack([-A * w * w * c, -A * w * w * sn, z], -1)
        return P, dP, ddP
    if spec.kind == "figure-eight":
        s1, c1 = np.sin(w * tau), np.cos(w * tau)
        s2, c2 = np.sin(2 * w * tau), np.cos(2 * w * tau)
        P = np.stack([A * s1, 0.5 * A * s2, h], -1)
        dP = np.stack([A * w * c1, A * w * c2, z], -1)
        ddP = np.stack([-A * w * w * s1, -2 * A * w * w * s2, z], -1)
        return P, dP, ddP
    # shuttle between (0, 0) and (A, 0)
    c, sn = np.cos(w * tau), np.sin(w * tau)
    P = np.stack([0.5 * A * (1 - c), z, h], -1)
    dP = np.stack([0.5 * A * w * sn, z, z], -1)
    ddP = np.stack([0.5 * A * w * w * c, z, z], -1)
    return P, dP, ddP


def _euler(spec, tau):
    """(roll, pitch, yaw) and their tau-derivatives."""
    w = 2 * np.pi / spec.period
    if spec.yaw == "fixed":
        yaw, dyaw = spec.yaw_value + 0 * tau, 0 * tau
    elif spec.yaw == "rate":
        yaw, dyaw = spec.yaw_value * tau, spec.yaw_value + 0 * tau
    else:
        yaw, dyaw = spec.yaw_value * np.sin(w * tau), spec.yaw_value * w * np.cos(w * tau)
    w1, w2 = 1.3 * w, 0.7 * w
    roll = spec.tilt * np.sin(w1 * tau)
    droll = spec.tilt * w1 * np.cos(w1 * tau)
    pitch = spec.tilt * np.sin(w2 * tau)
    dpitch = spec.tilt * w2 * np.cos(w2 * tau)
    return (roll, pitch, yaw), (droll, dpitch, dyaw)


def truth_arrays(spec, t):
    """Vectorized truth: dict of arrays keyed p, R, v, a, omega."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1e-12) or np.any(t > spec.duration + 1e-9):
        raise OutOfRange(f"time outside [0, {spec.duration}]")
    tau, rate, accel = _time_warp(spec, t)
    P, dP, ddP = _path(spec, tau)
    v = dP * rate[:, None]
    a = ddP * (rate ** 2)[:, None] + dP * accel[:, None]
    (r, pt, y), (dr, dpt, dy) = _euler(spec, tau)
    dr, dpt, dy = dr * rate, dpt * rate, dy * rate
    cr, sr, cp, sp = np.cos(r), np.sin(r), np.cos(pt), np.sin(pt)
    omega = np.stack([dr - dy * sp, dpt * cr + dy * cp * sr, -dpt * sr + dy * cp * cr], -1)
    R = np.stack([euler_zyx_to_rot(r[i], pt[i], y[i]) for i in range(t.size)])
    return {"t": t, "p": P, "R": R, "v": v, "a": a, "omega": omega}


def sample_truth(spec, t):
    tr = truth_arrays(spec, t)
    R = tr["R"][0]
    return TruthSample(float(t), tr["p"][0], rot_to_quat(R), R, tr["v"][0], tr["a"][0],
                       tr["omega"][0])


def _maybe_flip(tr, cfg):
    """Express truth in a z-up world with a FLU body when the filter expects it."""
    if not cfg.z_axis_up:
        return tr
    F = Z_FLIP
    out = dict(tr)
    out["p"] = tr["p"] @ F
    out["v"] = tr["v"] @ F
    out["a"] = tr["a"] @ F
    out["R"] = F @ tr["R"] @ F
    out["omega"] = tr["omega"] @ F
    return out


def imu_times(spec, rate):
    n = int(round(spec.duration * rate))
    return np.arange(n) / rate


@dataclass(frozen=True, eq=False)
class ImuTruth:
    samples: list
    b_a: np.ndarray
    b_g: np.ndarray


def synthesize_imu(spec, cfg, rate=200.0, noise=True, acc_bias0=(0.0, 0.0, 0.0),
                   gyro_bias0=(0.0, 0.0, 0.0), with_truth=False):
    """IMU stream for ``spec`` using the noise densities in ``cfg``.

    Returns a list of :class:`ImuSample`, or an :class:`ImuTruth` with the
    true bias histories when ``with_truth`` is set.
    """
    if not 50.0 <= rate <= 1000.0:
        raise ValueError("IMU rate must lie in [50, 1000] Hz")
    t = imu_times(spec, rate)
    tr = _maybe_flip(truth_arrays(spec, t), cfg)
    a_hat = np.einsum("nji,nj->ni", tr["R"], tr["a"] - cfg.gravity_world)
    w_hat = tr["omega"]
    n = t.size
    b_a = np.tile(np.asarray(acc_bias0, dtype=float), (n, 1))
    b_g = np.tile(np.asarray(gyro_bias0, dtype=float), (n, 1))
    wa = np.zeros((n, 3))
    wg = np.zeros((n, 3))
    if noise:
        rng = np.random.default_rng([spec.seed, 1])
        dt = 1.0 / rate
        wa = rng.standard_normal((n, 3)) * cfg.sigma_acc / math.sqrt(dt)
        wg = rng.standard_normal((n, 3)) * cfg.sigma_gyro / math.sqrt(dt)
        steps_a = rng.standard_normal((n, 3)) * cfg.sigma_acc_bias * math.sqrt(dt)
        steps_g = rng.standard_normal((n, 3)) * cfg.sigma_gyro_bias * math.sqrt(dt)
        steps_a[0] = 0.0
        steps_g[0] = 0.0
        b_a = b_a + np.cumsum(steps_a, axis=0)
        b_g = b_g + np.cumsum(steps_g, axis=0)
    a_m = a_hat + b_a + wa
    w_m = w_hat + b_g + wg
    samples = [ImuSample(t[i], a_m[i], w_m[i]) for i in range(n)]
    if with_truth:
        return ImuTruth(samples, b_a, b_g)
    return samples


def frame_times(spec, fps, drop_prob=0.0, seed=0):
    n = int(math.floor(spec.duration * fps + 1e-9))
    times = np.arange(n) / fps
    times = times[times <= spec.duration]
    if drop_prob > 0:
        rng = np.random.default_rng([seed, 3])
        keep = rng.random(times.size) >= drop_prob
        keep[0] = True
        times = times[keep]
    return times


def camera_pose(tr, i, cfg):
    """Camera-to-world rotation and camera centre for truth index ``i``."""
    R_wb = tr["R"][i]
    return R_wb @ cfg.R_CI.T, tr["p"][i] + R_wb @ cfg.t_IC


def true_homography(tr, i, j, cfg, frame="pixel"):
    """Plane homography from the camera at index ``i`` to the one at ``j``."""
    R1, C1 = camera_pose(tr, i, cfg)
    R2, C2 = camera_pose(tr, j, cfg)
    R21 = R2.T @ R1
    t21 = R2.T @ (C1 - C2)
    n1 = R1.T @ np.array([0.0, 0.0, 1.0])
    d1 = -C1[2]
    if d1 < 0:
        n1, d1 = -n1, -d1
    return homography_from_relative_pose(R21, t21, n1, d1, cfg.intrinsics, frame)


@dataclass(frozen=True, eq=False)
class SimulatedFrame:
    meas: FlowMeasurement
    target: np.ndarray
    sigma: np.ndarray


class SimulatedFrontend:
    """Noisy homography frontend over the frames of one simulated flight.

    ``measure(i, prior)`` produces the measurement relating kept frame
    ``i - 1`` to frame ``i``.  Given a pixel-frame prior flow, the output is
    the residual that remains after pre-warping with it.
    """

    def __init__(self, spec, cfg, fps=30.0, model=FrontendNoiseModel()):
        if not fps > 0:
            raise ValueError("fps must be positive")
        self.spec = spec
        self.cfg = cfg
        self.model = model
        self.times = frame_times(spec, fps, model.drop_prob, model.seed)
        self.truth = _maybe_flip(truth_arrays(spec, self.times), cfg)
        self.rng = np.random.default_rng([model.seed, 2])

    def __len__(self):
        return self.times.size

    def true_flow(self, i):
        """Pixel corner flow between frames i-1 and i."""
        h = true_homography(self.truth, i - 1, i, self.cfg)
        return homography_to_flow(h, self.cfg.intrinsics)

    def measure(self, i, prior=None):
        if not 1 <= i < len(self):
            raise IndexError(i)
        k = self.cfg.intrinsics
        m = self.model
        f_true = self.true_flow(i)
        if prior is not None:
            h_prior = flow_to_homography(prior, k)
            f_true = compose_total_flow(h_prior.inverse(), f_true, k)
        target = f_true.f
        sigma = m.base_sigma + m.flow_scale * np.linalg.norm(target, axis=1)
        if m.outlier_prob > 0:
            sigma = np.where(self.rng.random(4) < m.outlier_prob, m.outlier_sigma, sigma)
        noise = self.rng.standard_normal((4, 2)) * sigma[:, None]
        z = (target + noise).ravel()
        var = np.maximum(np.repeat(sigma ** 2, 2) * m.variance_fidelity, VARIANCE_FLOOR)
        meas = FlowMeasurement(float(self.times[i]), z, np.diag(var), prior is not None)
        return SimulatedFrame(meas, target.ravel(), np.repeat(sigma, 2))


def synthesize_measurements(spec, cfg, fps=30.0, model=FrontendNoiseModel(), use_prior=False,
                            priors=None):
    """Measurement list for every frame pair of the flight.

    With ``use_prior`` a pixel-frame prior flow per measurement must be
    supplied in ``priors``; the emitted flows are residuals against them.
    """
    fe = SimulatedFrontend(spec, cfg, fps, model)
    n = len(fe) - 1
    if use_prior:
        if priors is None or len(priors) != n:
            raise ValueError(f"use_prior needs {n} prior flows")
        return [fe.measure(i + 1, priors[i]).meas for i in range(n)]
    return [fe.measure(i + 1).meas for i in range(n)]


def state_from_truth(spec, cfg, t, b_a=(0.0, 0.0, 0.0), b_g=(0.0, 0.0, 0.0), flow=None):
    """Filter state matching the truth at time ``t``."""
    tr = _maybe_flip(truth_arrays(spec, t), cfg)
    R = tr["R"][0]
    f = np.zeros((4, 2)) if flow is None else np.asarray(flow, dtype=float).reshape(4, 2)
    return EkfState(R.T @ tr["p"][0], rot_to_quat(R), R.T @ tr["v"][0], b_a, b_g, f)


def truth_trajectory(spec, cfg, times):
    """(t, world position, quaternion) arrays at ``times``."""
    tr = _maybe_flip(truth_arrays(spec, times), cfg)
    q = np.stack([rot_to_quat(R) for R in tr["R"]])
    return tr["t"], tr["p"], q
