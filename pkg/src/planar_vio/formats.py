"""Flat-file interchange: key/value config, IMU and measurement CSV, TUM poses."""
import csv
from dataclasses import fields

import numpy as np

from .ekf.types import FilterConfig, FlowMeasurement, ImuSample
from .errors import ConfigError
from .evaluation import Trajectory
from .geometry import CameraIntrinsics
from .rotation import quat_to_rot, rot_to_quat
from .simulator import FrontendNoiseModel, TrajectorySpec

IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
MEAS_HEADER = (["t"] + [f"f{j}{c}" for j in range(1, 5) for c in "uv"]
               + [f"s{i}" for i in range(1, 9)] + ["used_prior"])

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _fmt(x):
    return repr(float(x))


def read_keyvalue(path):
    """Parse ``key = value`` lines; returns {key: (value, line_number)}."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot open: {exc.strerror}", path) from exc
    with fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}", path, n)
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError("empty key", path, n)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", path, n)
            out[key] = (value, n)
    return out


def _convert(kind, value, key, path, line):
    try:
        if kind is bool:
            v = value.lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if isinstance(kind, tuple):
            nums = [float(x) for x in value.replace(",", " ").split()]
            if len(nums) != kind[1]:
                raise ValueError(value)
            return np.array(nums)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {value!r}", path, line) from None


_CFG_SCALARS = {f.name: f.type for f in fields(FilterConfig)
                if f.name not in ("intrinsics", "R_CI", "t_IC")}
_CFG_KEYS = {**{k: (bool if t is bool else float) for k, t in _CFG_SCALARS.items()},
             "fx": float, "fy": float, "cx": float, "cy": float, "width": int, "height": int,
             "q_ci": ("vec", 4), "t_ic": ("vec", 3)}


def _typed(entries, schema, path):
    out = {}
    for key, (value, line) in entries.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}", path, line)
        out[key] = _convert(schema[key], value, key, path, line)
    return out


def parse_config(entries, path=None):
    vals = _typed(entries, _CFG_KEYS, path)
    kw = {}
    base = FilterConfig()
    k = base.intrinsics
    intr = {n: vals.pop(n, getattr(k, n)) for n in ("fx", "fy", "cx", "cy", "width", "height")}
    try:
        kw["intrinsics"] = CameraIntrinsics(**intr)
        if "q_ci" in vals:
            q = vals.pop("q_ci")
            kw["R_CI"] = quat_to_rot(q / np.linalg.norm(q))
        if "t_ic" in vals:
            kw["t_IC"] = vals.pop("t_ic")
        kw.update(vals)
        return FilterConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def load_config(path):
    return parse_config(read_keyvalue(path), path)


def write_config(path, cfg):
    k = cfg.intrinsics
    q = rot_to_quat(np.asarray(cfg.R_CI, dtype=float))
    lines = [f"fx = {k.fx!r}", f"fy = {k.fy!r}", f"cx = {k.cx!r}", f"cy = {k.cy!r}",
             f"width = {k.width}", f"height = {k.height}",
             "q_ci = " + " ".join(_fmt(x) for x in q),
             "t_ic = " + " ".join(_fmt(x) for x in cfg.t_IC)]
    for name in _CFG_SCALARS:
        v = getattr(cfg, name)
        lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else repr(float(v))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


_SPEC_KEYS = {"kind": str, "amplitude": float, "period": float, "height": float, "yaw": str,
              "yaw_value": float, "tilt": float, "duration": float, "seed": int,
              "settle": float, "ramp": float}
_MODEL_KEYS = {"base_sigma": float, "flow_scale": float, "outlier_prob": float,
               "outlier_sigma": float, "variance_fidelity": float, "drop_prob": float,
               "frontend_seed": int}
_SIM_KEYS = {"imu_rate": float, "fps": float, "imu_noise": bool, "acc_bias0": ("vec", 3),
             "gyro_bias0": ("vec", 3)}


def load_scenario(path):
    """Simulation scenario file: trajectory, frontend noise and stream rates."""
    entries = read_keyvalue(path)
    vals = _typed(entries, {**_SPEC_KEYS, **_MODEL_KEYS, **_SIM_KEYS}, path)
    spec_kw = {k: vals[k] for k in _SPEC_KEYS if k in vals}
    model_kw = {k: vals[k] for k in _MODEL_KEYS if k in vals and k != "frontend_seed"}
    if "frontend_seed" in vals:
        model_kw["seed"] = vals["frontend_seed"]
    sim = {"imu_rate": 200.0, "fps": 30.0, "imu_noise": True,
           "acc_bias0": np.zeros(3), "gyro_bias0": np.zeros(3)}
    sim.update({k: vals[k] for k in _SIM_KEYS if k in vals})
    try:
        spec = TrajectorySpec(**spec_kw)
        model = FrontendNoiseModel(**model_kw)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    if "frontend_seed" not in vals:
        model = FrontendNoiseModel(**{**model_kw, "seed": spec.seed})
    return spec, model, sim


def write_imu_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_HEADER)
        for s in samples:
            w.writerow([_fmt(s.t)] + [_fmt(x) for x in s.a_m] + [_fmt(x) for x in s.w_m])


def _read_csv(path, header, min_cols):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open: {exc.strerror}", path) from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return rows
        start = 1
        if [c.strip() for c in first[:len(header)]] != header[:len(first)]:
            try:
                [float(x) for x in first]
            except ValueError:
                raise ConfigError("unexpected header", path, 1) from None
            rows.append((1, first))
        for n, row in enumerate(reader, start + 1):
            if not row or not "".join(row).strip():
                continue
            rows.append((n, row))
    out = []
    for n, row in rows:
        if len(row) < min_cols:
            raise ConfigError(f"expected at least {min_cols} columns, got {len(row)}", path, n)
        try:
            out.append((n, [float(x) for x in row]))
        except ValueError:
            raise ConfigError("non-numeric field", path, n) from None
    return out


def read_imu_csv(path):
    samples = []
    last = -np.inf
    for n, v in _read_csv(path, IMU_HEADER, 7):
        if v[0] <= last:
            raise ConfigError("timestamps must increase", path, n)
        last = v[0]
        samples.append(ImuSample(v[0], v[1:4], v[4:7]))
    return samples


def write_measurements_csv(path, measurements):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEAS_HEADER)
        for m in measurements:
            w.writerow([_fmt(m.t)] + [_fmt(x) for x in m.z] + [_fmt(x) for x in np.diag(m.r_net)]
                       + [str(int(m.used_prior))])


def read_measurements_csv(path):
    out = []
    last = -np.inf
    for n, v in _read_csv(path, MEAS_HEADER, 17):
        if v[0] <= last:
            raise ConfigError("timestamps must increase", path, n)
        last = v[0]
        used = bool(v[17]) if len(v) > 17 else False
        try:
            out.append(FlowMeasurement(v[0], v[1:9], np.diag(v[9:17]), used))
        except ValueError as exc:
            raise ConfigError(str(exc), path, n) from None
    return out


def write_tum(path, traj, comment=None):
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("# t x y z qx qy qz qw\n")
        for t, p, q in zip(traj.t, traj.p, traj.q):
            fh.write(" ".join(_fmt(x) for x in (t, *p, q[1], q[2], q[3], q[0])) + "\n")


def read_tum(path):
    t, p, q = [], [], []
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot open: {exc.strerror}", path) from exc
    with fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ConfigError(f"expected 8 fields, got {len(parts)}", path, n)
            try:
                v = [float(x) for x in parts]
            except ValueError:
                raise ConfigError("non-numeric field", path, n) from None
            t.append(v[0])
            p.append(v[1:4])
            q.append([v[7], v[4], v[5], v[6]])
    if not t:
        raise ConfigError("no poses", path)
    try:
        return Trajectory(np.array(t), np.array(p), np.array(q))
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
