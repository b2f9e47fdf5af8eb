"""Homography and 8-d corner-flow algebra.

Two parameterizations of the planar map between consecutive frames are kept
interchangeable here: a 3x3 projective matrix and the displacement of the four
image corners.  Corner order is always upper-left, bottom-left, bottom-right,
upper-right.  Every object carries a frame tag, ``"pixel"`` or ``"normalized"``
(z=1 plane of the camera frame).
"""
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from .errors import (CameraOnPlane, DegenerateConfiguration, DegenerateTransfer,
                     NotPositiveSemiDefinite)

PIXEL = "pixel"
NORMALIZED = "normalized"
_FRAMES = (PIXEL, NORMALIZED)

LAMBDA_EPS = 1e-12
PSD_TOL = 1e-10


def _check_frame(frame):
    if frame not in _FRAMES:
        raise ValueError(f"unknown frame tag {frame!r}")


def canonicalize(m):
    """Scale a 3x3 matrix to unit Frobenius norm with m[2, 2] >= 0."""
    m = np.asarray(m, dtype=float)
    m = m / np.linalg.norm(m)
    pivot = m[2, 2]
    if pivot == 0.0:
        nz = np.flatnonzero(m.ravel())
        pivot = m.ravel()[nz[0]]
    return -m if pivot < 0 else m


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map between homogeneous coordinates of two views.

    Maps previous-image coordinates to current-image coordinates.  The stored
    matrix is kept as given; use ``canonical`` for comparisons.
    """
    m: np.ndarray
    frame: str = PIXEL

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography has non-finite entries")
        _check_frame(self.frame)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        if abs(np.linalg.det(canonicalize(m))) <= 1e-12:
            raise DegenerateConfiguration("singular homography")

    @classmethod
    def identity(cls, frame=PIXEL):
        return cls(np.eye(3), frame)

    @classmethod
    def translation(cls, du, dv, frame=PIXEL):
        return cls(np.array([[1.0, 0.0, du], [0.0, 1.0, dv], [0.0, 0.0, 1.0]]), frame)

    @cached_property
    def canonical(self):
        return canonicalize(self.m)

    def inverse(self):
        return Homography(canonicalize(np.linalg.inv(self.m)), self.frame)

    def __matmul__(self, other):
        if not isinstance(other, Homography):
            return NotImplemented
        if other.frame != self.frame:
            raise ValueError("cannot compose homographies in different frames")
        return Homography(canonicalize(self.m @ other.m), self.frame)

    def distance(self, other):
        """Max element difference between canonical forms."""
        return float(np.max(np.abs(self.canonical - other.canonical)))


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")

    @cached_property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @cached_property
    def K_inv(self):
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    @cached_property
    def corners_px(self):
        w, h = self.width - 1.0, self.height - 1.0
        c = np.array([[0.0, 0.0], [0.0, h], [w, h], [w, 0.0]])
        c.setflags(write=False)
        return c

    @cached_property
    def corners_normalized(self):
        c = (self.corners_px - [self.cx, self.cy]) / [self.fx, self.fy]
        c.setflags(write=False)
        return c

    def corners(self, frame):
        _check_frame(frame)
        return self.corners_px if frame == PIXEL else self.corners_normalized

    @cached_property
    def flow_scale(self):
        """Per-element factors taking an 8-d pixel flow to normalized units."""
        s = np.tile([1.0 / self.fx, 1.0 / self.fy], 4)
        s.setflags(write=False)
        return s


@dataclass(frozen=True, eq=False)
class CornerFlow:
    """Four 2-d corner displacements, shape (4, 2), order ul, bl, br, ur."""
    f: np.ndarray
    frame: str = PIXEL

    def __post_init__(self):
        f = np.array(self.f, dtype=float).reshape(4, 2)
        if not np.all(np.isfinite(f)):
            raise ValueError("corner flow has non-finite entries")
        _check_frame(self.frame)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @classmethod
    def zeros(cls, frame=PIXEL):
        return cls(np.zeros((4, 2)), frame)

    @classmethod
    def from_vector(cls, vec, frame=PIXEL):
        return cls(np.asarray(vec, dtype=float).reshape(4, 2), frame)

    def as_vector(self):
        """Flatten to (f1u, f1v, ..., f4u, f4v)."""
        return self.f.reshape(8).copy()

    def endpoints(self, k):
        return k.corners(self.frame) + self.f


@dataclass(frozen=True, eq=False)
class FlowCovariance:
    """8x8 covariance over a corner flow; 2x2 blocks on the diagonal are per corner."""
    matrix: np.ndarray
    frame: str = PIXEL

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape == (8,):
            m = np.diag(m)
        if m.shape != (8, 8):
            raise ValueError(f"flow covariance must be 8x8, got {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(m).max())):
            raise ValueError("flow covariance is not symmetric")
        _check_frame(self.frame)
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_variances(cls, variances, frame=PIXEL):
        return cls(np.diag(np.asarray(variances, dtype=float)), frame)

    def block(self, j):
        return self.matrix[2 * j:2 * j + 2, 2 * j:2 * j + 2]

    def variances(self):
        return np.diag(self.matrix).copy()

    def diagonal_only(self):
        """Drop every off-diagonal term."""
        return FlowCovariance(np.diag(np.diag(self.matrix)), self.frame)


def transfer_point(h, p):
    """Apply ``h`` to a 2-d point; returns ``(point, lam)``.

    ``lam`` is the third homogeneous component of ``h @ [u, v, 1]``.
    """
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=float)
    x = m @ np.array([p[0], p[1], 1.0])
    lam = x[2]
    if abs(lam) < LAMBDA_EPS:
        raise DegenerateTransfer(f"point {tuple(p)} maps to infinity (lambda={lam:g})")
    return x[:2] / lam, float(lam)


def transfer_points(m, pts):
    """Vectorized transfer of an (N, 2) array; returns (points, lambdas)."""
    pts = np.asarray(pts, dtype=float)
    x = pts @ m[:, :2].T + m[:, 2]
    lam = x[:, 2]
    if np.any(np.abs(lam) < LAMBDA_EPS):
        raise DegenerateTransfer("point maps to infinity")
    return x[:, :2] / lam[:, None], lam


def _hartley(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist == 0.0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return (pts - centroid) * s, T


def _check_general_position(pts, tol=1e-12):
    scale = np.max(np.abs(pts - pts.mean(axis=0))) ** 2
    for i, j, k in combinations(range(4), 3):
        a, b, c = pts[i], pts[j], pts[k]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) <= tol * scale:
            raise DegenerateConfiguration(f"corners {i}, {j}, {k} are collinear")


def dlt_homography(src, dst, rank_ratio=1e-6):
    """Four-point DLT with Hartley normalization.  src, dst: (4, 2)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    _check_general_position(src)
    _check_general_position(dst)
    xs, T1 = _hartley(src)
    xd, T2 = _hartley(dst)
    A = np.zeros((9, 9))
    for i in range(4):
        X = np.array([xs[i, 0], xs[i, 1], 1.0])
        u, v = xd[i]
        A[2 * i, 0:3] = X
        A[2 * i, 6:9] = -u * X
        A[2 * i + 1, 3:6] = X
        A[2 * i + 1, 6:9] = -v * X
    # row 9 stays zero: the square system exposes the null-space singular value
    _, s, Vt = np.linalg.svd(A)
    if s[-2] == 0.0 or s[-1] / s[-2] > rank_ratio:
        raise DegenerateConfiguration(
            f"DLT system is rank deficient (sv ratio {s[-1] / max(s[-2], 1e-300):.3g})")
    Hn = Vt[-1].reshape(3, 3)
    return canonicalize(np.linalg.solve(T2, Hn @ T1))


def flow_to_homography(f, k):
    """Recover the homography whose corner flow is ``f``."""
    c = k.corners(f.frame)
    return Homography(dlt_homography(c, c + f.f), f.frame)


def homography_to_flow(h, k):
    c = k.corners(h.frame)
    dst, _ = transfer_points(h.m, c)
    return CornerFlow(dst - c, h.frame)


def compose_total_flow(h_prior, f_delta, k, return_scales=False):
    """Corner flow of the chained map: prior homography after a residual flow.

    Each corner endpoint ``c + f_delta`` is pushed through ``h_prior``.  With
    ``return_scales`` the per-corner homogeneous scales are returned as well;
    they are the ones :func:`propagate_flow_variance` expects.
    """
    if h_prior.frame != f_delta.frame:
        raise ValueError("prior homography and residual flow are in different frames")
    c = k.corners(f_delta.frame)
    dst, lam = transfer_points(h_prior.m, c + f_delta.f)
    total = CornerFlow(dst - c, f_delta.frame)
    if return_scales:
        return total, lam
    return total


def propagate_flow_variance(h, sigma4, lambdas):
    """First-order transfer of per-corner endpoint covariance through ``h``.

    Each 2x2 block is embedded in a 3x3 matrix with a zero third row/column,
    mapped as ``h S h^T / lam^2`` and cut back to its leading 2x2 block.
    Cross-corner terms of the input are ignored; the per-corner 2x2 outputs
    keep their off-diagonal terms (see ``FlowCovariance.diagonal_only``).
    """
    lambdas = np.asarray(lambdas, dtype=float).reshape(4)
    if np.any(np.abs(lambdas) < LAMBDA_EPS):
        raise DegenerateTransfer("zero homogeneous scale")
    m = h.m
    out = np.zeros((8, 8))
    for j in range(4):
        S = np.zeros((3, 3))
        S[:2, :2] = sigma4.block(j)
        B = (m @ S @ m.T)[:2, :2] / lambdas[j] ** 2
        B = 0.5 * (B + B.T)
        if np.linalg.eigvalsh(B)[0] < -PSD_TOL:
            raise NotPositiveSemiDefinite(f"corner {j} covariance lost PSD")
        out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = B
    return FlowCovariance(out, sigma4.frame)


def pixels_to_normalized(f, cov, k):
    if f.frame != PIXEL or (cov is not None and cov.frame != PIXEL):
        raise ValueError("expected pixel-frame inputs")
    s = k.flow_scale
    fn = CornerFlow.from_vector(f.as_vector() * s, NORMALIZED)
    if cov is None:
        return fn, None
    return fn, FlowCovariance(cov.matrix * np.outer(s, s), NORMALIZED)


def normalized_to_pixels(f, cov, k):
    if f.frame != NORMALIZED or (cov is not None and cov.frame != NORMALIZED):
        raise ValueError("expected normalized-frame inputs")
    s = 1.0 / k.flow_scale
    fp = CornerFlow.from_vector(f.as_vector() * s, PIXEL)
    if cov is None:
        return fp, None
    return fp, FlowCovariance(cov.matrix * np.outer(s, s), PIXEL)


def to_pixel_homography(h, k):
    if h.frame == PIXEL:
        return h
    return Homography(k.K @ h.m @ k.K_inv, PIXEL)


def to_normalized_homography(h, k):
    if h.frame == NORMALIZED:
        return h
    return Homography(k.K_inv @ h.m @ k.K, NORMALIZED)


def homography_from_relative_pose(rotation, translation, plane_normal, distance, k, frame=PIXEL):
    """Two-view plane homography ``R + t n^T / d``.

    ``rotation``/``translation`` take points from the previous camera frame to
    the current one; the plane satisfies ``n . X = d`` in the previous camera
    frame.
    """
    if distance < 1e-9:
        raise CameraOnPlane(f"camera-to-plane distance {distance:g} m")
    R = np.asarray(rotation, dtype=float)
    t = np.asarray(translation, dtype=float).reshape(3)
    n = np.asarray(plane_normal, dtype=float).reshape(3)
    n = n / np.linalg.norm(n)
    Hn = R + np.outer(t, n) / distance
    h = Homography(Hn, NORMALIZED)
    return h if frame == NORMALIZED else to_pixel_homography(h, k)
