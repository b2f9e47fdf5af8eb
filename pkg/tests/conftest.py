import numpy as np
import pytest

from planar_vio.geometry import CameraIntrinsics


@pytest.fixture
def k():
    return CameraIntrinsics(200.0, 200.0, 159.5, 111.5, 320, 224)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_homography(rng, scale=0.1, persp=1e-4):
    """Pixel homography near identity with m22 = 1."""
    m = np.eye(3)
    m[:2, :2] += rng.uniform(-scale, scale, (2, 2))
    m[:2, 2] = rng.uniform(-20, 20, 2)
    m[2, :2] = rng.uniform(-persp, persp, 2)
    return m


def twist_pose(R0, P0, w, v_b, t):
    """Body pose after ``t`` seconds of constant body twist (w, v_b), in closed form."""
    from scipy.linalg import expm
    from planar_vio.rotation import skew
    X = np.zeros((4, 4))
    X[:3, :3] = skew(w)
    X[:3, 3] = v_b
    T = expm(X * t)
    return R0 @ T[:3, :3], P0 + R0 @ T[:3, 3]


def twist_flow_case(cfg, R0, P0, w, v_b, T, rate=200.0):
    """Filter flow after integrating a constant-twist flight for ``T`` seconds,
    and the flow of the ground-truth two-view homography (normalized units)."""
    from planar_vio.ekf import EkfState, ImuSample, propagate
    from planar_vio.geometry import NORMALIZED, homography_to_flow
    from planar_vio.rotation import rot_to_quat
    from planar_vio.simulator import true_homography

    g = cfg.gravity_world
    w = np.asarray(w, dtype=float)
    v_b = np.asarray(v_b, dtype=float)

    def imu(t):
        R, _ = twist_pose(R0, P0, w, v_b, t)
        return ImuSample(t, np.cross(w, v_b) - R.T @ g, w)

    state = EkfState(R0.T @ P0, rot_to_quat(R0), v_b, np.zeros(3), np.zeros(3))
    cov = cfg.initial_covariance()
    edges = np.append(np.arange(0.0, T, 1.0 / rate), T)
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-12])]
    for t0, t1 in zip(edges[:-1], edges[1:]):
        state, cov = propagate(state, cov, imu(t0), t1 - t0, cfg, imu(t1))
    R1, P1 = twist_pose(R0, P0, w, v_b, T)
    tr = {"R": [R0, R1], "p": [P0, P1]}
    h = true_homography(tr, 0, 1, cfg, NORMALIZED)
    return state.f.ravel(), homography_to_flow(h, cfg.intrinsics).as_vector()
