"""Compiled inner loop of the filter: nominal dynamics, error-state Jacobians
and one IMU propagation interval.

Nominal vector layout (24): p, q(wxyz), v, b_a, b_g, f(8).
Error vector layout (23): dp, dtheta, dv, db_a, db_g, df(8).
Noise layout (15): w_a, w_g, w_ba, w_bg, w_p.
"""
import numpy as np
from numba import njit

from ..rotation import quat_mul, quat_to_rot, skew

D_MIN = 1e-6

OK = 0
PLANE_COLLISION = 1


@njit(cache=True)
def plane_terms(p, R, R_CI, t_IC, sign):
    """Plane normal in the camera frame and camera-to-plane distance."""
    mu = sign * (R_CI @ R[2, :])
    d = -sign * (R[2, :] @ (p + t_IC))
    return mu, d


@njit(cache=True)
def homography_terms(x, w_hat, R_CI, t_IC, sign):
    """Continuous homography and its ingredients at nominal state ``x``."""
    p = x[0:3]
    v = x[7:10]
    R = quat_to_rot(x[3:7])
    w_c = R_CI @ w_hat
    v_c = R_CI @ (v + np.cross(w_hat, t_IC))
    mu, d = plane_terms(p, R, R_CI, t_IC, sign)
    H = skew(w_c)
    if abs(d) >= D_MIN:
        H = H + np.outer(v_c, mu) / d
    return H, v_c, mu, d, R


@njit(cache=True)
def flow_rates(f, corners, H):
    out = np.empty(8)
    for j in range(4):
        x = np.array([corners[j, 0] + f[2 * j], corners[j, 1] + f[2 * j + 1], 1.0])
        Hx = H @ x
        # -(I - x e_z^T) H x, first two rows
        out[2 * j] = -Hx[0] + x[0] * Hx[2]
        out[2 * j + 1] = -Hx[1] + x[1] * Hx[2]
    return out


@njit(cache=True)
def derivative(x, a_m, w_m, R_CI, t_IC, g_w, corners, sign):
    a_hat = a_m - x[10:13]
    w_hat = w_m - x[13:16]
    p = x[0:3]
    v = x[7:10]
    H, v_c, mu, d, R = homography_terms(x, w_hat, R_CI, t_IC, sign)
    xd = np.zeros(24)
    xd[0:3] = -np.cross(w_hat, p) + v
    omega = np.array([0.0, w_hat[0], w_hat[1], w_hat[2]])
    xd[3:7] = 0.5 * quat_mul(x[3:7], omega)
    xd[7:10] = -np.cross(w_hat, v) + a_hat + R.T @ g_w
    xd[16:24] = flow_rates(x[16:24], corners, H)
    return xd, d


@njit(cache=True)
def _project_rows(F, r, c, M, x):
    """F[r:r+2, c:c+3] = -(I - x e_z^T) M, first two rows."""
    for a in range(2):
        for b in range(3):
            F[r + a, c + b] = -M[a, b] + x[a] * M[2, b]


@njit(cache=True)
def error_jacobians(x, a_m, w_m, R_CI, t_IC, g_w, corners, sign):
    """Continuous-time error-state Jacobian F (23x23) and noise input G (23x15)."""
    p = x[0:3]
    v = x[7:10]
    f = x[16:24]
    w_hat = w_m - x[13:16]
    H, v_c, mu, d, R = homography_terms(x, w_hat, R_CI, t_IC, sign)
    I3 = np.eye(3)
    Sw = skew(w_hat)
    F = np.zeros((23, 23))
    F[0:3, 0:3] = -Sw
    F[0:3, 6:9] = I3
    F[0:3, 12:15] = -skew(p)
    F[3:6, 3:6] = -Sw
    F[3:6, 12:15] = -I3
    F[6:9, 3:6] = skew(R.T @ g_w)
    F[6:9, 6:9] = -Sw
    F[6:9, 9:12] = -I3
    F[6:9, 12:15] = -skew(v)

    e3R = R[2, :]
    d_mu_dth = sign * (R_CI @ skew(e3R))
    d_d_dp = -sign * e3R
    d_d_dth = sign * (e3R @ skew(p + t_IC))
    big_d = abs(d) >= D_MIN
    RCI_tIC = R_CI @ skew(t_IC)
    xj = np.ones(3)
    for j in range(4):
        r = 15 + 2 * j
        xj[0] = corners[j, 0] + f[2 * j]
        xj[1] = corners[j, 1] + f[2 * j + 1]
        Hx = H @ xj
        # flow-on-flow block
        for a in range(2):
            for b in range(2):
                F[r + a, r + b] = -H[a, b] + xj[a] * H[2, b]
            F[r + a, r + a] += Hx[2]
        mux = mu @ xj
        dHx_dbg = skew(xj) @ R_CI
        if big_d:
            dHx_dp = np.outer(v_c, d_d_dp) * (-mux / d ** 2)
            dHx_dth = np.outer(v_c, xj @ d_mu_dth) / d - np.outer(v_c, d_d_dth) * (mux / d ** 2)
            dHx_dv = R_CI * (mux / d)
            dHx_dbg = dHx_dbg + RCI_tIC * (mux / d)
            _project_rows(F, r, 0, dHx_dp, xj)
            _project_rows(F, r, 3, dHx_dth, xj)
            _project_rows(F, r, 6, dHx_dv, xj)
        _project_rows(F, r, 12, dHx_dbg, xj)

    G = np.zeros((23, 15))
    G[:, 0:3] = F[:, 9:12]
    G[:, 3:6] = F[:, 12:15]
    G[9:12, 6:9] = I3
    G[12:15, 9:12] = I3
    G[0:3, 12:15] = I3
    return F, G


@njit(cache=True)
def _normalize_q(x):
    q = x[3:7]
    n = np.sqrt(np.sum(q * q))
    x[3:7] = q / n
    if x[3] < 0.0:
        x[3:7] = -x[3:7]


@njit(cache=True)
def propagate_interval(x, P, a0, w0, a1, w1, dt, R_CI, t_IC, g_w, corners, sign,
                       qc_diag, max_substep):
    """Propagate mean (RK4) and covariance (Phi = I + F h) over ``dt``.

    IMU rates vary linearly from (a0, w0) at the start to (a1, w1) at the end
    of the interval.  Returns (x, P, status).
    """
    n = int(np.ceil(dt / max_substep - 1e-9))
    if n < 1:
        n = 1
    h = dt / n
    x = x.copy()
    P = P.copy()
    for i in range(n):
        s0 = i / n
        s1 = (i + 0.5) / n
        s2 = (i + 1.0) / n
        am0 = a0 + (a1 - a0) * s0
        wm0 = w0 + (w1 - w0) * s0
        am1 = a0 + (a1 - a0) * s1
        wm1 = w0 + (w1 - w0) * s1
        am2 = a0 + (a1 - a0) * s2
        wm2 = w0 + (w1 - w0) * s2

        F, G = error_jacobians(x, am1, wm1, R_CI, t_IC, g_w, corners, sign)

        k1, d1 = derivative(x, am0, wm0, R_CI, t_IC, g_w, corners, sign)
        k2, d2 = derivative(x + 0.5 * h * k1, am1, wm1, R_CI, t_IC, g_w, corners, sign)
        k3, d3 = derivative(x + 0.5 * h * k2, am1, wm1, R_CI, t_IC, g_w, corners, sign)
        k4, d4 = derivative(x + h * k3, am2, wm2, R_CI, t_IC, g_w, corners, sign)
        if min(abs(d1), abs(d2), abs(d3), abs(d4)) < D_MIN:
            return x, P, PLANE_COLLISION
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _normalize_q(x)

        Phi = np.eye(23) + F * h
        P = Phi @ P @ Phi.T + ((G * qc_diag) @ G.T) * h
        P = 0.5 * (P + P.T)
    return x, P, OK
