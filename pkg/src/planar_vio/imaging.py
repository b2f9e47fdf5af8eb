"""Homography warping and the photometric / content-aware losses.

Pure evaluators over float images in [0, 1]; nothing here differentiates or
trains.  Images are (height, width) arrays indexed ``img[v, u]``.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DegenerateTransfer, EmptyMask, NonPositiveScale
from .geometry import LAMBDA_EPS, PIXEL

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PHOTOMETRIC_ALPHA = 0.85
E_CLAMP = 1e-6


@dataclass(frozen=True, eq=False)
class GrayImage:
    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=float)
        if d.ndim != 2:
            raise ValueError("grayscale image must be 2-d")
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0.0 or d.max(initial=0.0) > 1.0:
            raise ValueError("intensities must be finite and within [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def _data(x):
    return x.data if isinstance(x, GrayImage) else np.asarray(x, dtype=float)


def warp_image(src, h):
    """Sample ``src`` at ``h`` applied to every integer pixel of the output.

    Returns ``(warped, valid)``; ``valid`` is 1 where every neighbour used by
    the bilinear blend lies inside ``src`` and 0 elsewhere (warped value 0).
    """
    if h.frame != PIXEL:
        raise ValueError("warp_image needs a pixel-frame homography")
    img = _data(src)
    H, W = img.shape
    vv, uu = np.mgrid[0:H, 0:W].astype(float)
    m = h.m
    X = m[0, 0] * uu + m[0, 1] * vv + m[0, 2]
    Y = m[1, 0] * uu + m[1, 1] * vv + m[1, 2]
    Z = m[2, 0] * uu + m[2, 1] * vv + m[2, 2]
    if np.any(np.abs(Z) < LAMBDA_EPS):
        raise DegenerateTransfer("warp samples a point at infinity")
    x = X / Z
    y = Y / Z
    x0 = np.floor(x)
    y0 = np.floor(y)
    ax = x - x0
    ay = y - y0
    # a neighbour with zero weight need not exist
    valid = ((x0 >= 0) & (y0 >= 0) & (x0 <= W - 1) & (y0 <= H - 1)
             & ((ax == 0) | (x0 + 1 <= W - 1)) & ((ay == 0) | (y0 + 1 <= H - 1)))
    xi = np.clip(x0, 0, W - 1).astype(int)
    yi = np.clip(y0, 0, H - 1).astype(int)
    xj = np.clip(x0 + 1, 0, W - 1).astype(int)
    yj = np.clip(y0 + 1, 0, H - 1).astype(int)
    out = ((1 - ax) * (1 - ay) * img[yi, xi] + ax * (1 - ay) * img[yi, xj]
           + (1 - ax) * ay * img[yj, xi] + ax * ay * img[yj, xj])
    out = np.where(valid, out, 0.0)
    return GrayImage(np.clip(out, 0.0, 1.0)), valid.astype(float)


def ssim_map(a, b):
    """Per-pixel SSIM over a 3x3 box window (mirror padding), clamped to [-1, 1]."""
    x = _data(a)
    y = _data(b)
    if x.shape != y.shape:
        raise ValueError("images differ in size")

    def box(z):
        return uniform_filter(z, size=3, mode="mirror")

    mx, my = box(x), box(y)
    sxx = box(x * x) - mx * mx
    syy = box(y * y) - my * my
    sxy = box(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return np.clip(num / den, -1.0, 1.0)


def _masked_mean(values, valid):
    v = np.asarray(valid, dtype=float) > 0
    if not v.any():
        raise EmptyMask("no valid pixels")
    return float(np.mean(values[v]))


def photometric_loss(ip, ic_warped, valid, alpha=PHOTOMETRIC_ALPHA):
    """SSIM + L1 blend; returns ``(mean over valid pixels, per-pixel map)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    x, y = _data(ip), _data(ic_warped)
    per_pixel = alpha / 2.0 * (1.0 - ssim_map(x, y)) + (1.0 - alpha) * np.abs(x - y)
    return _masked_mean(per_pixel, valid), per_pixel


def explainability_loss(loss_map, e, valid, lambda_reg):
    """E-weighted photometric loss plus a cross-entropy pull of E toward 1."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    L = np.asarray(loss_map, dtype=float)
    E = np.asarray(e, dtype=float)
    if np.any((E < 0) | (E > 1)):
        raise ValueError("explainability must lie in [0, 1]")
    data_term = _masked_mean(E * L, valid)
    if lambda_reg == 0:
        return data_term
    reg = -np.log(np.clip(E, E_CLAMP, 1.0 - E_CLAMP))
    return data_term + lambda_reg * _masked_mean(reg, valid)


def laplacian_pdf(x, mu, b):
    return np.exp(-np.abs(np.asarray(x) - mu) / b) / (2.0 * b)


def laplacian_variance(b):
    """Variance of a Laplace distribution with scale ``b``."""
    return 2.0 * np.square(b)


def laplacian_nll_loss(loss_map, b, valid):
    """Mean over valid pixels of L/b + log b."""
    L = np.asarray(loss_map, dtype=float)
    B = np.asarray(b, dtype=float) * np.ones_like(L)
    v = np.asarray(valid, dtype=float) > 0
    if not v.any():
        raise EmptyMask("no valid pixels")
    if np.any(B[v] <= 0):
        raise NonPositiveScale("Laplacian scale must be positive on valid pixels")
    return float(np.mean(L[v] / B[v] + np.log(B[v])))


def read_pgm(path):
    """Binary PGM (P5), 8- or 16-bit, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos)
    return GrayImage(pixels.reshape(h, w).astype(float) / maxval)


def write_pgm(path, image, maxval=255):
    d = _data(image)
    h, w = d.shape
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.rint(np.clip(d, 0.0, 1.0) * maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.tobytes())


def write_grid_csv(path, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(grid, dtype=float):
            w.writerow([repr(float(x)) for x in row])
