"""Command-line drivers: simulate, run, evaluate, montecarlo.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
``PLANAR_VIO_LOG`` sets the log level (name or number, default WARNING).
"""
import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ekf.types import FilterConfig
from .errors import FilterDivergence, PlanarVioError
from .evaluation import (Trajectory, align_posyaw, ate_rmse, latency_report,
                         relative_translation_errors)
from .formats import (load_config, load_scenario, read_imu_csv, read_measurements_csv,
                      read_tum, write_imu_csv, write_measurements_csv, write_tum)
from .pipeline import SimulationSetup, run_filter, run_montecarlo
from .simulator import frame_times, synthesize_imu, synthesize_measurements, truth_trajectory
from .uncertainty import ause, inside_rate, read_pairs_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
DEFAULT_LENGTHS = (2.0, 5.0, 10.0, 15.0)

log = logging.getLogger("planar_vio")


def _fmt(x):
    return repr(float(x))


def _config(path):
    return FilterConfig() if path is None else load_config(path)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lengths(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("lengths must be positive")
    return vals


def _scenario(path, seed):
    spec, model, sim = load_scenario(path)
    if seed is not None:
        spec = replace(spec, seed=seed)
        model = replace(model, seed=seed)
    return spec, model, sim


def cmd_simulate(args):
    cfg = _config(args.config)
    spec, model, sim = _scenario(args.spec, args.seed)
    out = _outdir(args.out)
    imu = synthesize_imu(spec, cfg, sim["imu_rate"], sim["imu_noise"], sim["acc_bias0"],
                         sim["gyro_bias0"])
    meas = synthesize_measurements(spec, cfg, sim["fps"], model)
    times = frame_times(spec, sim["fps"], model.drop_prob, model.seed)
    t, p, q = truth_trajectory(spec, cfg, times)
    write_imu_csv(out / "imu.csv", imu)
    write_measurements_csv(out / "meas.csv", meas)
    write_tum(out / "groundtruth.tum", Trajectory(t, p, q))
    with open(out / "manifest.txt", "w") as fh:
        fh.write("mode = simulate\n")
        fh.write(f"spec = {args.spec}\n")
        fh.write(f"config = {args.config}\n")
        fh.write(f"seed = {spec.seed}\n")
        fh.write(f"imu_rows = {len(imu)}\n")
        fh.write(f"measurement_rows = {len(meas)}\n")
    print(f"wrote {len(imu)} IMU samples and {len(meas)} measurements to {out}")
    return EXIT_OK


def write_innovations(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"y{i}" for i in range(1, 9)] + ["mahalanobis", "accepted"])
        for r in records:
            w.writerow([_fmt(r.t)] + [_fmt(x) for x in r.innovation]
                       + [_fmt(r.mahalanobis), str(int(r.accepted))])


def write_latency(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "visual_ms", "propagation_ms", "update_ms", "total_ms"])
        for i, r in enumerate(records):
            w.writerow([i, _fmt(r.visual), _fmt(r.propagation), _fmt(r.update), _fmt(r.total)])


def _write_run(out, res):
    write_tum(out / "trajectory.tum", res.trajectory)
    write_innovations(out / "innovations.csv", res.innovations)
    write_latency(out / "latency.csv", res.latency)


def cmd_run(args):
    cfg = _config(args.config)
    if args.gate:
        cfg = cfg.replace(gate=True)
    imu = read_imu_csv(args.imu)
    meas = read_measurements_csv(args.meas)
    if args.use_prior:
        meas = [replace(m, used_prior=True) for m in meas]
    out = _outdir(args.out)
    try:
        res = run_filter(cfg, imu, meas, use_prior=args.use_prior)
    except FilterDivergence as exc:
        if exc.partial is not None:
            _write_run(out, exc.partial)
        print(f"error: filter diverged: {exc}", file=sys.stderr)
        print(f"last good timestamp: {exc.last_good_time!r}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_run(out, res)
    rejected = sum(not r.accepted for r in res.innovations)
    print(f"processed {len(res.latency)} frames, rejected {rejected}")
    if res.latency:
        s = latency_report(res.latency)
        print(f"latency mean {s.mean:.4f} ms, variance {s.variance:.6f} ms^2")
    if args.gt:
        gt = read_tum(args.gt)
        aligned, _, _ = align_posyaw(res.trajectory, gt)
        print(f"ate_rmse_m = {ate_rmse(aligned, gt)!r}")
    return EXIT_OK


def evaluate(est, gt, lengths, pairs=None):
    """Metric dictionary and relative-error table, as reported by ``evaluate``."""
    aligned, yaw, trans = align_posyaw(est, gt)
    report = {"ate_rmse_m": ate_rmse(aligned, gt), "yaw_rad": yaw,
              "tx_m": float(trans[0]), "ty_m": float(trans[1]), "tz_m": float(trans[2]),
              "matched_poses": len(aligned)}
    boxes = relative_translation_errors(aligned, gt, lengths)
    if pairs is not None:
        err, var = pairs
        report["ause"] = ause(err, var)
        report["inside_rate_pct"] = inside_rate(err, var)
    return report, boxes


def cmd_evaluate(args):
    est = read_tum(args.est)
    gt = read_tum(args.gt)
    pairs = read_pairs_csv(args.pairs) if args.pairs else None
    report, boxes = evaluate(est, gt, args.lengths, pairs)
    lines = [f"{k} = {v!r}" for k, v in report.items()]
    print("\n".join(lines))
    print("length_m count min q1 median q3 max")
    for b in boxes:
        print(f"{b.length:g} {b.count} {b.min!r} {b.q1!r} {b.median!r} {b.q3!r} {b.max!r}")
    if args.out:
        out = _outdir(args.out)
        with open(out / "metrics.txt", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(out / "relative_errors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["length_m", "count", "min", "q1", "median", "q3", "max"])
            for b in boxes:
                w.writerow([_fmt(b.length), b.count, _fmt(b.min), _fmt(b.q1), _fmt(b.median),
                            _fmt(b.q3), _fmt(b.max)])
    return EXIT_OK


def cmd_montecarlo(args):
    cfg = _config(args.config)
    spec, model, sim = _scenario(args.spec, None)
    seed = spec.seed if args.seed is None else args.seed
    setup = SimulationSetup(sim["imu_rate"], sim["fps"], sim["imu_noise"], model)
    if args.runs < 2:
        raise ValueError("--runs must be at least 2")
    rep = run_montecarlo(spec, cfg, args.runs, seed, setup, use_prior=args.use_prior)
    lo, hi = rep.bounds
    print(f"runs = {rep.runs}")
    print(f"failed_runs = {len(rep.failures)}")
    for s, msg in rep.failures:
        print(f"  seed {s}: {msg}")
    print(f"nees_dim = {rep.dim}")
    print(f"chi2_bounds = {lo!r} {hi!r}")
    print(f"inside_fraction = {rep.inside_fraction!r}")
    print(f"above_fraction = {rep.above_fraction!r}")
    print(f"ate_mean_m = {float(np.mean(rep.ate))!r}")
    print(f"ate_std_m = {float(np.std(rep.ate))!r}")
    print(f"ate_max_m = {float(np.max(rep.ate))!r}")
    if args.out:
        out = _outdir(args.out)
        with open(out / "nees.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "nees", "lower", "upper"])
            for t, n in zip(rep.times, rep.nees):
                w.writerow([_fmt(t), _fmt(n), _fmt(lo), _fmt(hi)])
        with open(out / "ate.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "ate_m"])
            for s, a in sorted(zip(rep.seeds, rep.ate)):
                w.writerow([s, _fmt(a)])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="planar-vio", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("spec", help="scenario file (key = value)")
    s.add_argument("--config", help="filter/sensor config file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the filter on IMU and measurement CSV files")
    r.add_argument("--config")
    r.add_argument("--imu", required=True)
    r.add_argument("--meas", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--gt", help="ground-truth TUM file for an ATE printout")
    r.add_argument("--use-prior", action="store_true",
                   help="measurements are residuals against the a-priori flow")
    r.add_argument("--gate", action="store_true", help="enable the innovation gate")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="trajectory metrics against ground truth")
    e.add_argument("est", help="estimated TUM trajectory")
    e.add_argument("--gt", required=True)
    e.add_argument("--lengths", type=_lengths, default=list(DEFAULT_LENGTHS),
                   help="comma-separated sub-trajectory lengths in metres")
    e.add_argument("--pairs", help="CSV of (error, variance) pairs for AUSE and inside rate")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("montecarlo", help="NEES consistency over seeded simulated runs")
    m.add_argument("spec")
    m.add_argument("--config")
    m.add_argument("--runs", type=int, default=50)
    m.add_argument("--seed", type=int)
    m.add_argument("--use-prior", action="store_true")
    m.add_argument("--out")
    m.set_defaults(func=cmd_montecarlo)
    return p


def _setup_logging():
    level = os.environ.get("PLANAR_VIO_LOG", "WARNING").strip()
    lvl = int(level) if level.isdigit() else logging.getLevelName(level.upper())
    if not isinstance(lvl, int):
        lvl = logging.WARNING
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FilterDivergence as exc:
        print(f"error: filter diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PlanarVioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
