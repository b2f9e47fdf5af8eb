"""Uncertainty fusion and uncertainty-quality metrics.

Error-variance pairs are the evaluation unit: one absolute error and one
predicted variance per flow element.
"""
import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import EmptyInput, EmptySampleSet, NonPositiveScale
from .geometry import FlowCovariance


@dataclass(frozen=True, eq=False)
class PredictionSample:
    """One model sample: 8-d mean and 8-d predictive variance (pixels, pixels^2)."""
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        s2 = np.array(self.sigma2, dtype=float).reshape(-1)
        if mu.shape != s2.shape:
            raise ValueError("mean and variance shapes differ")
        if np.any(s2 <= 0):
            raise ValueError("predictive variances must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", s2)


def gaussian_nll(target, mu, log_sigma2):
    """Heteroscedastic Gaussian NLL summed over elements (constant term dropped)."""
    t = np.asarray(target, dtype=float)
    m = np.asarray(mu, dtype=float)
    ls = np.asarray(log_sigma2, dtype=float)
    return float(np.sum(0.5 * np.exp(-ls) * (t - m) ** 2 + 0.5 * ls))


def fuse_samples(samples):
    """Combine ensemble / dropout samples into one mean and total variance.

    Total variance is the mean predictive variance plus the population
    variance (divisor M) of the sample means.
    """
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("no samples to fuse")
    mus = np.stack([s.mu for s in samples])
    s2 = np.stack([s.sigma2 for s in samples])
    mu = mus.mean(axis=0)
    pred = s2.mean(axis=0)
    emp = np.mean((mus - mu) ** 2, axis=0)
    return PredictionSample(mu, pred + emp)


def _as_pairs(errors, variances):
    e = np.abs(np.asarray(errors, dtype=float).reshape(-1))
    v = np.asarray(variances, dtype=float).reshape(-1)
    if e.size == 0:
        raise EmptyInput("no error-variance pairs")
    if e.shape != v.shape:
        raise ValueError("errors and variances differ in length")
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    return e, v


_SCALE_EXP = 1074   # every finite double is an integer multiple of 2**-1074


def _removal_curve(errors, order, batch):
    """Correctly rounded mean of the pairs left after each removal step.

    Sums are exact (integer multiples of 2**-1074), so the ordinates do not
    depend on summation order and the estimated curve can never dip below
    the oracle curve through rounding.
    """
    scaled = []
    for x in errors[order].tolist():
        num, den = x.as_integer_ratio()
        scaled.append(num << (_SCALE_EXP - den.bit_length() + 1))
    n = len(scaled)
    suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + scaled[i]
    return np.array([float(Fraction(suffix[s], (n - s) << _SCALE_EXP))
                     for s in range(0, n, batch)])


@dataclass(frozen=True, eq=False)
class SparsificationCurves:
    ratio: np.ndarray
    estimated: np.ndarray
    oracle: np.ndarray

    @property
    def error(self):
        return self.estimated - self.oracle


def sparsification_curves(errors, variances, batch=10):
    """Mean remaining error as pairs are removed ``batch`` at a time.

    The estimated curve removes the highest-variance pairs first, the oracle
    curve the highest-error pairs.  Ties keep input order.  Step ``k`` leaves
    ``n - k*batch`` pairs; ``ratio`` is the fraction already removed.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    e, v = _as_pairs(errors, variances)
    by_var = np.argsort(-v, kind="stable")
    by_err = np.argsort(-e, kind="stable")
    est = _removal_curve(e, by_var, batch)
    orc = _removal_curve(e, by_err, batch)
    ratio = np.arange(0, e.size, batch) / e.size
    return SparsificationCurves(ratio, est, orc)


def ause(errors, variances, batch=10):
    """Sum of the sparsification-error ordinates over every removal step."""
    return float(np.sum(sparsification_curves(errors, variances, batch).error))


def inside_rate(errors, variances, k_sigma=3.0):
    """Percentage of errors within ``k_sigma`` standard deviations (inclusive)."""
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    e, v = _as_pairs(errors, variances)
    return 100.0 * float(np.mean(e <= k_sigma * np.sqrt(v)))


def trimmed_mean(values, fraction=0.001):
    """Mean after dropping the largest ``fraction`` of values (reporting helper)."""
    x = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if x.size == 0:
        raise EmptyInput("no values")
    drop = int(np.floor(fraction * x.size))
    return float(np.mean(x[:x.size - drop]))


def scale_measurement_covariance(r_net, k_var):
    """R_meas = k_var * R_net."""
    if not k_var > 0:
        raise NonPositiveScale(f"k_var must be positive, got {k_var!r}")
    if isinstance(r_net, FlowCovariance):
        return FlowCovariance(r_net.matrix * k_var, r_net.frame)
    return np.asarray(r_net, dtype=float) * k_var


def read_pairs_csv(path):
    """Load ``error,variance`` columns (header required)."""
    errors, variances = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"error", "variance"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header with error,variance")
        for row in reader:
            errors.append(float(row["error"]))
            variances.append(float(row["variance"]))
    return np.array(errors), np.array(variances)


def write_pairs_csv(path, errors, variances):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["error", "variance"])
        for e, v in zip(errors, variances):
            w.writerow([repr(float(e)), repr(float(v))])


def write_curves_csv(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ratio", "estimated", "oracle", "error"])
        for row in zip(curves.ratio, curves.estimated, curves.oracle, curves.error):
            w.writerow([repr(float(x)) for x in row])
