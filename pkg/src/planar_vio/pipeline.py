"""Filter runs over IMU/measurement streams, closed-loop simulation and
Monte Carlo consistency analysis."""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .ekf.filter import Estimator, check_covariance, initialize, inject, reset_flow
from .ekf.types import CORE_DIM, ERROR_DIM, IDX_BA, IDX_BG, IDX_P, IDX_TH, IDX_V, EkfState
from .errors import (EmptyInput, FilterDivergence, NonMonotoneTime, NotPositiveSemiDefinite,
                     PlaneCollision)
from .evaluation import LatencyRecord, Trajectory, posyaw_ate
from .geometry import pixels_to_normalized
from .rotation import quat_conj, quat_log, quat_mul, quat_to_rot
from .simulator import (FrontendNoiseModel, SimulatedFrontend, state_from_truth,
                        synthesize_imu, truth_trajectory)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InnovationRecord:
    t: float
    innovation: np.ndarray
    mahalanobis: float
    accepted: bool


@dataclass(eq=False)
class RunResult:
    """Output of one filter run.

    ``trajectory`` holds one world-frame pose at the start time and one per
    processed frame.  ``snapshots`` (when requested) holds
    ``(t, prior_state, prior_cov, post_state, post_cov)`` per frame.
    """
    trajectory: Trajectory
    innovations: list
    latency: list
    state: EkfState
    cov: np.ndarray
    snapshots: list = field(default_factory=list)


def world_pose(state):
    """World position R(q) p and the attitude quaternion."""
    return quat_to_rot(state.q) @ state.p, state.q


def _window(imu, duration):
    t0 = imu[0].t
    return [s for s in imu if s.t <= t0 + duration + 1e-12]


class _Source:
    """Uniform access to offline measurement lists and simulated frontends."""

    def __init__(self, measurements):
        self.frontend = measurements if isinstance(measurements, SimulatedFrontend) else None
        if self.frontend is None:
            self.items = list(measurements)
            self.times = np.array([m.t for m in self.items])
            self.first = 0
        else:
            self.times = self.frontend.times
            self.first = 1
        if np.any(np.diff(self.times) <= 0):
            raise NonMonotoneTime("measurement timestamps must increase")

    def get(self, i, prior):
        if self.frontend is None:
            return self.items[i]
        return self.frontend.measure(i, prior).meas


def run_filter(cfg, imu, measurements, state=None, cov=None, use_prior=False, update=True,
               snapshots=False, check=True, meas_hook=None):
    """Run the filter over an IMU stream and a measurement source.

    ``measurements`` is a list of :class:`FlowMeasurement` or a
    :class:`SimulatedFrontend`; a frontend is queried online, receiving the
    a-priori flow when ``use_prior`` is set.  Without an initial ``state`` the
    filter is initialized from the first ``cfg.init_window`` seconds of IMU
    data.  With ``update=False`` frames only trigger a flow reset, giving
    IMU-only dead reckoning recorded at the frame times.  ``meas_hook``, if
    given, maps each measurement before the update (ablations).

    Raises :class:`FilterDivergence` on numerical breakdown.
    """
    imu = list(imu)
    if len(imu) < 2:
        raise EmptyInput("need at least two IMU samples")
    if state is None:
        state, cov0 = initialize(_window(imu, cfg.init_window), cfg.initial_height, cfg)
        cov = cov0 if cov is None else cov
    elif cov is None:
        cov = cfg.initial_covariance()
    src = _Source(measurements)
    est = Estimator(cfg, state, cov, imu[0].t)

    ts, ps, qs = [est.t], [], []
    p, q = world_pose(est.state)
    ps.append(p)
    qs.append(q)
    innovations, latency, snaps = [], [], []
    k = 0
    last_good = est.t
    frontend_timed = src.frontend is not None

    def partial():
        return RunResult(Trajectory(ts, ps, qs), innovations, latency, est.state, est.cov, snaps)

    for i in range(src.first, len(src.times)):
        tm = float(src.times[i])
        if tm <= est.t + 1e-9:
            continue
        if tm > imu[-1].t + 1e-9:
            break
        try:
            while imu[k + 1].t < tm:
                est.advance(imu[k], imu[k + 1], imu[k + 1].t)
                k += 1
            est.advance(imu[k], imu[k + 1], tm)
            prior = (est.state, est.cov.copy()) if snapshots else None
            if update:
                tic = time.perf_counter()
                meas = src.get(i, est.prior_flow() if use_prior else None)
                if frontend_timed:
                    est.timer.visual += 1e3 * (time.perf_counter() - tic)
                if meas_hook is not None:
                    meas = meas_hook(meas)
                if use_prior and not meas.used_prior:
                    raise ValueError("use_prior run needs residual measurements")
                out = est.update(meas)
                innovations.append(InnovationRecord(out.t, out.innovation, out.mahalanobis,
                                                    out.accepted))
            else:
                est.state, est.cov = reset_flow(est.state, est.cov, cfg.flow_reset_eps)
            if check:
                check_covariance(est.cov)
                if not np.all(np.isfinite(est.state.to_vector())):
                    raise NotPositiveSemiDefinite("state has non-finite entries")
        except (NotPositiveSemiDefinite, PlaneCollision) as exc:
            raise FilterDivergence(str(exc), last_good, partial()) from exc
        times = est.pop_times()
        latency.append(LatencyRecord(times.visual, times.propagation, times.update))
        last_good = est.t
        p, q = world_pose(est.state)
        ts.append(est.t)
        ps.append(p)
        qs.append(q)
        if snapshots:
            snaps.append((est.t, prior[0], prior[1], est.state, est.cov.copy()))
    return partial()


@dataclass(frozen=True)
class SimulationSetup:
    """Everything needed to reproduce one closed-loop simulated run."""
    imu_rate: float = 200.0
    fps: float = 30.0
    imu_noise: bool = True
    model: FrontendNoiseModel = FrontendNoiseModel()


def simulate_run(spec, cfg, setup=SimulationSetup(), filter_cfg=None, use_prior=False,
                 update=True, init="truth", acc_bias0=(0.0, 0.0, 0.0),
                 gyro_bias0=(0.0, 0.0, 0.0), init_error=None, snapshots=False, meas_hook=None):
    """Simulate a flight and run the filter on it in closed loop.

    ``cfg`` drives the simulator (IMU noise densities, geometry);
    ``filter_cfg`` (default ``cfg``) is what the filter believes.  ``init`` is
    ``"truth"`` (start from the true state plus ``init_error``, a 15-d error
    vector) or ``"static"`` (stationary initialization from the IMU).
    Returns ``(RunResult, ground-truth Trajectory, ImuTruth)``.
    """
    fcfg = cfg if filter_cfg is None else filter_cfg
    imu = synthesize_imu(spec, cfg, setup.imu_rate, setup.imu_noise, acc_bias0, gyro_bias0,
                         with_truth=True)
    fe = SimulatedFrontend(spec, cfg, setup.fps, setup.model)
    t0 = imu.samples[0].t
    if init == "truth":
        state = state_from_truth(spec, cfg, t0, imu.b_a[0], imu.b_g[0])
        if init_error is not None:
            state = perturb(state, init_error)
        res = run_filter(fcfg, imu.samples, fe, state, fcfg.initial_covariance(), use_prior,
                         update, snapshots, meas_hook=meas_hook)
    elif init == "static":
        res = run_filter(fcfg, imu.samples, fe, None, None, use_prior, update, snapshots,
                         meas_hook=meas_hook)
    else:
        raise ValueError(f"unknown init mode {init!r}")
    t, p, q = truth_trajectory(spec, cfg, fe.times)
    return res, Trajectory(t, p, q), imu


def constant_covariance(variance):
    """Measurement hook replacing the reported covariance by ``variance * I``."""
    def hook(meas):
        return replace(meas, r_net=np.full(8, float(variance)))
    return hook


def perturb(state, dx):
    """Apply a 15-d (or 23-d) error vector to a state."""
    dx = np.asarray(dx, dtype=float)
    full = np.zeros(ERROR_DIM)
    full[:dx.size] = dx
    return inject(state, full)


def state_error(est, truth):
    """Error-state vector (core 15) such that truth = est (+) error."""
    e = np.zeros(CORE_DIM)
    e[IDX_P] = truth.p - est.p
    e[IDX_TH] = quat_log(quat_mul(quat_conj(est.q), truth.q))
    e[IDX_V] = truth.v - est.v
    e[IDX_BA] = truth.b_a - est.b_a
    e[IDX_BG] = truth.b_g - est.b_g
    return e


def nees(error, cov):
    """e^T P^-1 e via a Cholesky solve."""
    L = np.linalg.cholesky(cov)
    w = np.linalg.solve(L, error)
    return float(w @ w)


def chi2_bounds(dim, runs, prob=0.95):
    """Two-sided bounds for the average NEES of ``runs`` independent runs."""
    lo = chi2.ppf((1 - prob) / 2, dim * runs) / runs
    hi = chi2.ppf(1 - (1 - prob) / 2, dim * runs) / runs
    return float(lo), float(hi)


@dataclass(eq=False)
class MonteCarloReport:
    """Per-timestep average NEES with its chi-square band and ATE statistics."""
    times: np.ndarray
    nees: np.ndarray
    dim: int
    runs: int
    bounds: tuple
    ate: np.ndarray
    seeds: list
    failures: list

    @property
    def inside_fraction(self):
        lo, hi = self.bounds
        return float(np.mean((self.nees >= lo) & (self.nees <= hi)))

    @property
    def above_fraction(self):
        return float(np.mean(self.nees > self.bounds[1]))


def _truth_states(spec, cfg, times, imu_truth, rate):
    idx = np.clip(np.round(np.asarray(times) * rate).astype(int), 0, len(imu_truth.b_a) - 1)
    return [state_from_truth(spec, cfg, t, imu_truth.b_a[j], imu_truth.b_g[j])
            for t, j in zip(times, idx)]


def _true_flow_normalized(fe, cfg, i):
    f, _ = pixels_to_normalized(fe.true_flow(i), None, cfg.intrinsics)
    return f.as_vector()


def nees_series(res, spec, cfg, imu_truth, rate, fe=None, prior=False):
    """NEES per frame of one run.

    Post-update (default) uses the 15-d core state; ``prior=True`` evaluates
    the 23-d pre-update state including the accumulated flow, which needs the
    simulated frontend ``fe`` for the true flow.
    """
    times = [s[0] for s in res.snapshots]
    truth = _truth_states(spec, cfg, times, imu_truth, rate)
    out = np.empty(len(times))
    for n, (snap, tr) in enumerate(zip(res.snapshots, truth)):
        t, s_pri, P_pri, s_post, P_post = snap
        if prior:
            i = int(np.searchsorted(fe.times, t - 1e-9))
            e = np.concatenate([state_error(s_pri, tr),
                                _true_flow_normalized(fe, cfg, i) - s_pri.f.ravel()])
            out[n] = nees(e, P_pri)
        else:
            out[n] = nees(state_error(s_post, tr), P_post[:CORE_DIM, :CORE_DIM])
    return np.array(times), out


def run_montecarlo(spec, cfg, runs, seed=0, setup=SimulationSetup(), filter_cfg=None,
                   use_prior=False, prior_nees=False, prob=0.95):
    """Independent seeded runs starting from truth perturbed by a draw from P0.

    Run ``r`` uses seed ``seed + r`` for the trajectory, IMU noise, frontend
    and initial error.  Runs that diverge are listed in ``failures`` and left
    out of the averages.
    """
    if runs < 2:
        raise ValueError("Monte Carlo needs at least two runs")
    fcfg = cfg if filter_cfg is None else filter_cfg
    P0 = fcfg.initial_covariance()[:CORE_DIM, :CORE_DIM]
    L0 = np.linalg.cholesky(P0)
    series, ates, seeds, failures = [], [], [], []
    times = None
    for r in range(runs):
        s = seed + r
        rspec = spec.__class__(**{**spec.__dict__, "seed": s})
        rsetup = SimulationSetup(setup.imu_rate, setup.fps, setup.imu_noise,
                                 FrontendNoiseModel(**{**setup.model.__dict__, "seed": s}))
        rng = np.random.default_rng([s, 4])
        b = L0 @ rng.standard_normal(CORE_DIM)
        err = L0 @ rng.standard_normal(CORE_DIM)
        try:
            res, gt, imu = simulate_run(rspec, cfg, rsetup, fcfg, use_prior,
                                        acc_bias0=b[IDX_BA], gyro_bias0=b[IDX_BG],
                                        init_error=-err, snapshots=True)
        except FilterDivergence as exc:
            failures.append((s, str(exc)))
            log.warning("run with seed %d diverged: %s", s, exc)
            continue
        fe = SimulatedFrontend(rspec, cfg, rsetup.fps, rsetup.model) if prior_nees else None
        t, e = nees_series(res, rspec, cfg, imu, rsetup.imu_rate, fe, prior_nees)
        if times is None:
            times = t
        n = min(len(times), len(t))
        times = times[:n]
        series = [x[:n] for x in series] + [e[:n]]
        ates.append(posyaw_ate(res.trajectory, gt))
        seeds.append(s)
    if not series:
        raise FilterDivergence("every Monte Carlo run diverged", float("nan"))
    dim = ERROR_DIM if prior_nees else CORE_DIM
    avg = np.mean(series, axis=0)
    return MonteCarloReport(times, avg, dim, len(series), chi2_bounds(dim, len(series), prob),
                            np.array(ates), seeds, failures)

