import numpy as np
import pytest
from scipy.stats import kstest

from planar_vio.ekf import FilterConfig
from planar_vio.errors import OutOfRange
from planar_vio.pipeline import run_filter
from planar_vio.rotation import skew
from planar_vio.simulator import (FrontendNoiseModel, SimulatedFrontend, TrajectorySpec,
                                  frame_times, sample_truth, state_from_truth, synthesize_imu,
                                  synthesize_measurements, truth_arrays, truth_trajectory)
from planar_vio.uncertainty import inside_rate

G = 9.81


def test_hover_truth():
    spec = TrajectorySpec("hover", height=2.0)
    for t in (0.0, 3.7, 60.0):
        s = sample_truth(spec, t)
        np.testing.assert_array_equal(s.R, np.eye(3))
        np.testing.assert_array_equal(s.v, 0.0)
        np.testing.assert_array_equal(s.a, 0.0)
        np.testing.assert_array_equal(s.p, [0.0, 0.0, -2.0])


@pytest.mark.parametrize("r,T", [(1.0, 10.0), (2.5, 6.0)])
def test_circle_centripetal(r, T):
    spec = TrajectorySpec("circle", r, T)
    tr = truth_arrays(spec, np.linspace(5.0, 30.0, 50))
    np.testing.assert_allclose(np.linalg.norm(tr["a"], axis=1), (2 * np.pi / T) ** 2 * r,
                               rtol=1e-12)


def test_figure_eight_high_precision():
    # 30-digit evaluation of the parametric curve at t = 7.3 s (tau = 5.3 s)
    s = sample_truth(TrajectorySpec("figure-eight", 3.0, 12.0), 7.3)
    np.testing.assert_allclose(s.p, [1.075103848635900820452413, -1.00369590953828732073941,
                                     -1.0], rtol=1e-14)
    np.testing.assert_allclose(s.v[:2], [-1.466464704709417481397495, 1.167329162136525369785898],
                               rtol=1e-14)
    s = sample_truth(TrajectorySpec("figure-eight", 3.0, 12.0), 3.5)
    np.testing.assert_allclose(s.p[:2], [2.121320343559642573202533, 1.5], rtol=1e-14)


@pytest.mark.parametrize("spec", [
    TrajectorySpec("figure-eight", 3.0, 12.0, tilt=0.1, yaw="sine", yaw_value=0.4),
    TrajectorySpec("circle", 2.0, 8.0, yaw="rate", yaw_value=0.3, tilt=0.05),
    TrajectorySpec("shuttle", 4.0, 9.0, yaw="fixed", yaw_value=1.0),
])
def test_truth_derivatives_match_finite_differences(spec):
    t = np.array([0.5, 1.6, 2.4, 3.2, 11.1, 23.4])
    h = 1e-5
    tr = truth_arrays(spec, t)
    hi, lo = truth_arrays(spec, t + h), truth_arrays(spec, t - h)
    np.testing.assert_allclose((hi["p"] - lo["p"]) / (2 * h), tr["v"], atol=1e-8)
    np.testing.assert_allclose((hi["v"] - lo["v"]) / (2 * h), tr["a"], atol=1e-7)
    for i in range(t.size):
        Rdot = (hi["R"][i] - lo["R"][i]) / (2 * h)
        np.testing.assert_allclose(tr["R"][i].T @ Rdot, skew(tr["omega"][i]), atol=1e-8)


def test_starts_from_rest():
    spec = TrajectorySpec("figure-eight", 3.0, 12.0)
    tr = truth_arrays(spec, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(tr["v"], 0.0)
    np.testing.assert_array_equal(tr["a"], 0.0)


def test_out_of_range():
    spec = TrajectorySpec(duration=10.0)
    with pytest.raises(OutOfRange):
        sample_truth(spec, 10.5)
    with pytest.raises(OutOfRange):
        sample_truth(spec, -0.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(height=0.0)
    with pytest.raises(ValueError):
        TrajectorySpec(period=-1.0)
    with pytest.raises(ValueError):
        TrajectorySpec("spiral")
    with pytest.raises(ValueError):
        FrontendNoiseModel(outlier_prob=1.5)
    with pytest.raises(ValueError):
        FrontendNoiseModel(base_sigma=-1.0)


# -- IMU -----------------------------------------------------------------------------------

def test_hover_imu_constant():
    imu = synthesize_imu(TrajectorySpec("hover", duration=2.0), FilterConfig(), noise=False)
    assert len(imu) == 400
    for s in imu:
        np.testing.assert_array_equal(s.a_m, [0.0, 0.0, -G])
        np.testing.assert_array_equal(s.w_m, 0.0)


def test_hover_imu_z_up():
    imu = synthesize_imu(TrajectorySpec("hover", duration=0.1), FilterConfig(z_axis_up=True),
                         noise=False)
    np.testing.assert_allclose(imu[0].a_m, [0.0, 0.0, G], atol=1e-15)


def test_imu_rate_bounds():
    with pytest.raises(ValueError):
        synthesize_imu(TrajectorySpec(duration=1.0), FilterConfig(), rate=20.0)
    with pytest.raises(ValueError):
        synthesize_imu(TrajectorySpec(duration=1.0), FilterConfig(), rate=2000.0)


def test_imu_deterministic():
    spec = TrajectorySpec("circle", 2.0, 8.0, duration=5.0, seed=7)
    a = synthesize_imu(spec, FilterConfig(), acc_bias0=(0.1, 0, 0))
    b = synthesize_imu(spec, FilterConfig(), acc_bias0=(0.1, 0, 0))
    assert all(np.array_equal(x.a_m, y.a_m) and np.array_equal(x.w_m, y.w_m) for x, y in zip(a, b))
    c = synthesize_imu(spec.__class__(**{**spec.__dict__, "seed": 8}), FilterConfig())
    assert not np.array_equal(a[10].a_m, c[10].a_m)


def test_imu_noise_level():
    cfg = FilterConfig(sigma_acc_bias=0.0, sigma_gyro_bias=0.0)
    imu = synthesize_imu(TrajectorySpec("hover", duration=50.0), cfg, rate=200.0)
    a = np.array([s.a_m for s in imu]) - [0.0, 0.0, -G]
    np.testing.assert_allclose(a.std(axis=0), cfg.sigma_acc * np.sqrt(200.0), rtol=0.03)


def test_imu_bias_truth():
    imu = synthesize_imu(TrajectorySpec("hover", duration=1.0), FilterConfig(),
                         gyro_bias0=(0.01, 0.0, 0.0), with_truth=True)
    np.testing.assert_array_equal(imu.b_g[0], [0.01, 0.0, 0.0])
    assert len(imu.samples) == imu.b_a.shape[0]


@pytest.mark.parametrize("spec,rate", [
    (TrajectorySpec("shuttle", 3.0, 8.0, yaw="sine", yaw_value=0.3, duration=10.0), 200.0),
    (TrajectorySpec("circle", 2.0, 8.0, tilt=0.1, yaw="sine", yaw_value=0.3, duration=10.0),
     1000.0),
])
def test_zero_noise_imu_reproduces_truth(spec, rate):
    cfg = FilterConfig()
    imu = synthesize_imu(spec, cfg, rate, noise=False)
    fe = SimulatedFrontend(spec, cfg, 30.0, FrontendNoiseModel.noiseless())
    res = run_filter(cfg, imu, fe, state_from_truth(spec, cfg, 0.0), cfg.initial_covariance(),
                     update=False)
    _, p, _ = truth_trajectory(spec, cfg, res.trajectory.t)
    assert res.trajectory.t[-1] > 9.9
    assert np.max(np.linalg.norm(res.trajectory.p - p, axis=1)) < 1e-5


# -- measurements ------------------------------------------------------------------------

def test_hover_zero_noise_measurements():
    meas = synthesize_measurements(TrajectorySpec("hover", duration=2.0), FilterConfig(), 30.0,
                                   FrontendNoiseModel.noiseless())
    assert len(meas) == 59
    for m in meas:
        assert np.max(np.abs(m.z)) < 1e-12
        np.testing.assert_array_equal(np.diag(m.r_net), 1e-8)


def test_lateral_flight_flow():
    # 1 m/s along x at 1 m height; frames after the ramp
    spec = TrajectorySpec("line", amplitude=10.0, period=10.0, height=1.0, duration=6.0)
    fe = SimulatedFrontend(spec, FilterConfig(), 30.0, FrontendNoiseModel.noiseless())
    f = fe.true_flow(150).f
    np.testing.assert_allclose(f[:, 0], -200.0 / 30.0, rtol=1e-9)
    np.testing.assert_allclose(f[:, 1], 0.0, atol=1e-9)


def test_measurements_deterministic():
    spec = TrajectorySpec("circle", 2.0, 8.0, duration=3.0, seed=5)
    model = FrontendNoiseModel(0.5, 0.05, 0.1, 10.0, seed=5)
    a = synthesize_measurements(spec, FilterConfig(), 30.0, model)
    b = synthesize_measurements(spec, FilterConfig(), 30.0, model)
    assert all(np.array_equal(x.z, y.z) and np.array_equal(x.r_net, y.r_net)
               for x, y in zip(a, b))


def _normalized_errors(fidelity=1.0, frames=12500):
    spec = TrajectorySpec("circle", 2.0, 8.0, duration=frames / 30.0 + 0.1, seed=11)
    model = FrontendNoiseModel(0.5, 0.05, 0.0, variance_fidelity=fidelity, seed=11)
    fe = SimulatedFrontend(spec, FilterConfig(), 30.0, model)
    err, var = [], []
    for i in range(1, frames + 1):
        fr = fe.measure(i)
        err.append(fr.meas.z - fr.target)
        var.append(np.diag(fr.meas.r_net))
    return np.concatenate(err), np.concatenate(var)


def test_frontend_noise_is_standard_normal():
    err, var = _normalized_errors()
    assert err.size >= 10 ** 5
    assert kstest(err / np.sqrt(var), "norm").pvalue > 0.01
    assert abs(inside_rate(np.abs(err), var, 3) - 99.73) < 0.2


def test_variance_fidelity_scales_reported_variance():
    spec = TrajectorySpec("circle", 2.0, 8.0, duration=2.0, seed=1)
    a = SimulatedFrontend(spec, FilterConfig(), 30.0, FrontendNoiseModel(seed=1)).measure(40)
    b = SimulatedFrontend(spec, FilterConfig(), 30.0,
                          FrontendNoiseModel(variance_fidelity=3.0, seed=1)).measure(40)
    np.testing.assert_array_equal(a.meas.z, b.meas.z)
    np.testing.assert_allclose(np.diag(b.meas.r_net), 3.0 * np.diag(a.meas.r_net), rtol=1e-15)


def test_flow_scaled_noise():
    spec = TrajectorySpec("line", 10.0, 10.0, duration=6.0)
    fr = SimulatedFrontend(spec, FilterConfig(), 30.0, FrontendNoiseModel(0.5, 0.1)).measure(150)
    np.testing.assert_allclose(fr.sigma, 0.5 + 0.1 * 200.0 / 30.0, rtol=1e-9)


def test_outliers_report_inflated_variance():
    spec = TrajectorySpec("hover", duration=2.0)
    fr = SimulatedFrontend(spec, FilterConfig(), 30.0,
                           FrontendNoiseModel(0.5, 0.0, 1.0, 10.0)).measure(5)
    np.testing.assert_array_equal(fr.sigma, 10.0)
    np.testing.assert_array_equal(np.diag(fr.meas.r_net), 100.0)


def test_prior_residuals():
    spec = TrajectorySpec("line", 10.0, 10.0, duration=6.0)
    cfg = FilterConfig()
    fe = SimulatedFrontend(spec, cfg, 30.0, FrontendNoiseModel.noiseless())
    prior = fe.true_flow(150)
    fr = fe.measure(150, prior)
    assert fr.meas.used_prior
    assert np.max(np.abs(fr.meas.z)) < 1e-9
    with pytest.raises(ValueError):
        synthesize_measurements(spec, cfg, use_prior=True)


def test_frame_drops():
    spec = TrajectorySpec(duration=10.0)
    full = frame_times(spec, 30.0)
    assert full.size == 300
    kept = frame_times(spec, 30.0, 0.2, seed=3)
    assert kept[0] == 0.0 and 200 < kept.size < 280
    np.testing.assert_array_equal(kept, frame_times(spec, 30.0, 0.2, seed=3))
    assert np.all(np.isin(kept, full))
