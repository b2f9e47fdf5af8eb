"""Trajectory accuracy (posyaw alignment, ATE, relative errors) and latency
accounting."""
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InsufficientOverlap
from .rotation import quat_mul, rot_z

MATCH_GATE = 0.010


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped world-frame positions with unit quaternions (w, x, y, z)."""
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (t.size == p.shape[0] == q.shape[0]):
            raise ValueError("trajectory arrays differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return self.t.size

    def subset(self, idx):
        return Trajectory(self.t[idx], self.p[idx], self.q[idx])


def associate(est, gt, gate=MATCH_GATE):
    """Nearest-neighbour time association; returns index arrays (est, gt)."""
    if len(gt) == 0 or len(est) == 0:
        raise InsufficientOverlap("empty trajectory")
    j = np.searchsorted(gt.t, est.t)
    j = np.clip(j, 1, len(gt) - 1) if len(gt) > 1 else np.zeros_like(j)
    if len(gt) > 1:
        left = j - 1
        pick_left = np.abs(est.t - gt.t[left]) <= np.abs(gt.t[j] - est.t)
        j = np.where(pick_left, left, j)
    ok = np.abs(gt.t[j] - est.t) <= gate
    i = np.flatnonzero(ok)
    j = j[ok]
    # one-to-one: keep the closest estimate per ground-truth sample
    _, first = np.unique(j, return_index=True)
    return i[first], j[first]


def matched(est, gt, gate=MATCH_GATE, min_pairs=2):
    i, j = associate(est, gt, gate)
    if i.size < min_pairs:
        raise InsufficientOverlap(f"only {i.size} matched poses")
    return est.subset(i), gt.subset(j)


def posyaw_fit(p_est, p_gt):
    """Least-squares yaw and translation taking ``p_est`` onto ``p_gt``."""
    me, mg = p_est.mean(axis=0), p_gt.mean(axis=0)
    e, g = p_est - me, p_gt - mg
    s = np.sum(e[:, 0] * g[:, 1] - e[:, 1] * g[:, 0])
    c = np.sum(e[:, 0] * g[:, 0] + e[:, 1] * g[:, 1])
    yaw = float(np.arctan2(s, c))
    t = mg - rot_z(yaw) @ me
    return yaw, t


def apply_posyaw(traj, yaw, t):
    Rz = rot_z(yaw)
    qz = np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])
    q = np.stack([quat_mul(qz, qi) for qi in traj.q])
    return Trajectory(traj.t, traj.p @ Rz.T + t, q)


def align_posyaw(est, gt, gate=MATCH_GATE):
    """4-DoF alignment (yaw about gravity + translation, no scale).

    Returns ``(aligned, yaw, translation)``; ``aligned`` holds the matched
    estimate poses only.
    """
    e, g = matched(est, gt, gate)
    yaw, t = posyaw_fit(e.p, g.p)
    return apply_posyaw(e, yaw, t), yaw, t


def ate_rmse(est, gt, gate=MATCH_GATE):
    """RMSE of position differences over associated poses."""
    e, g = matched(est, gt, gate, min_pairs=1)
    return float(np.sqrt(np.mean(np.sum((e.p - g.p) ** 2, axis=1))))


def posyaw_ate(est, gt, gate=MATCH_GATE):
    aligned, _, _ = align_posyaw(est, gt, gate)
    return ate_rmse(aligned, gt, gate)


@dataclass(frozen=True)
class BoxStats:
    length: float
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float


def relative_translation_errors(est, gt, lengths, gate=MATCH_GATE):
    """Endpoint drift over sub-trajectories of given ground-truth path length.

    Every matched pose starts a window ending at the first pose whose
    travelled distance reaches the length; the error is
    ``|(est_end - est_start) - (gt_end - gt_start)|``.  Returns one
    :class:`BoxStats` per length (``count`` 0 and NaN stats when the
    trajectory is shorter than the length).
    """
    e, g = matched(est, gt, gate)
    dist = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(g.p, axis=0), axis=1))])
    out = []
    for L in lengths:
        errs = []
        for i in range(len(g)):
            j = np.searchsorted(dist, dist[i] + L, side="left")
            if j >= len(g):
                break
            d_est = e.p[j] - e.p[i]
            d_gt = g.p[j] - g.p[i]
            errs.append(np.linalg.norm(d_est - d_gt))
        if errs:
            q = np.percentile(errs, [0, 25, 50, 75, 100])
            out.append(BoxStats(float(L), len(errs), *map(float, q)))
        else:
            out.append(BoxStats(float(L), 0, *([float("nan")] * 5)))
    return out


@dataclass(frozen=True)
class LatencyRecord:
    """Per-frame durations in milliseconds."""
    visual: float
    propagation: float
    update: float

    @property
    def total(self):
        return self.visual + self.propagation + self.update


@dataclass(frozen=True)
class LatencySummary:
    frames: int
    mean: float
    variance: float
    long_ratio: float
    mean_visual: float
    mean_propagation: float
    mean_update: float


def latency_report(records, frame_interval=1000.0 / 30.0):
    """Mean and variance of per-frame total time and the percentage of frames
    whose total exceeds ``frame_interval``."""
    records = list(records)
    if not records:
        raise EmptyInput("no latency records")
    total = np.array([r.total for r in records])
    return LatencySummary(
        frames=len(records), mean=float(total.mean()), variance=float(total.var()),
        long_ratio=100.0 * float(np.mean(total > frame_interval)),
        mean_visual=float(np.mean([r.visual for r in records])),
        mean_propagation=float(np.mean([r.propagation for r in records])),
        mean_update=float(np.mean([r.update for r in records])))
