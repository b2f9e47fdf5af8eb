import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from planar_vio.errors import DegenerateTransfer, EmptyMask, NonPositiveScale
from planar_vio.geometry import NORMALIZED, Homography
from planar_vio.imaging import (GrayImage, explainability_loss, laplacian_nll_loss,
                                laplacian_pdf, laplacian_variance, photometric_loss, read_pgm,
                                ssim_map, warp_image, write_grid_csv, write_pgm)


def smooth_image(h=40, w=50):
    v, u = np.mgrid[0:h, 0:w].astype(float)
    return GrayImage(0.5 + 0.25 * np.sin(u / 6.0) * np.cos(v / 5.0) + 0.1 * np.sin((u + v) / 9.0))


def textured(rng, h=20, w=24):
    return GrayImage(rng.uniform(0.1, 0.8, (h, w)))


# -- GrayImage ----------------------------------------------------------------

def test_gray_image_range():
    with pytest.raises(ValueError):
        GrayImage([[0.0, 1.5]])
    with pytest.raises(ValueError):
        GrayImage(np.zeros(4))


# -- warp ------------------------------------------------------------------------

def test_warp_identity_bit_exact(rng):
    img = textured(rng)
    out, valid = warp_image(img, Homography.identity())
    np.testing.assert_array_equal(out.data, img.data)
    np.testing.assert_array_equal(valid, 1.0)


def test_warp_integer_shift(rng):
    img = textured(rng)
    out, valid = warp_image(img, Homography.translation(1.0, 0.0))
    np.testing.assert_array_equal(out.data[:, :-1], img.data[:, 1:])
    np.testing.assert_array_equal(valid[:, -1], 0.0)
    np.testing.assert_array_equal(valid[:, :-1], 1.0)


def _lerp_reference(img, x, y):
    """Bilinear sample as two nested 1-d linear interpolations."""
    H, W = img.shape
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    if x0 < 0 or y0 < 0 or x0 + 1 > W - 1 or y0 + 1 > H - 1:
        return None
    tx, ty = x - x0, y - y0
    row0 = img[y0, x0] + tx * (img[y0, x0 + 1] - img[y0, x0])
    row1 = img[y0 + 1, x0] + tx * (img[y0 + 1, x0 + 1] - img[y0 + 1, x0])
    return row0 + ty * (row1 - row0)


def test_warp_subpixel_matches_separable_reference(rng):
    img = textured(rng)
    du, dv = rng.uniform(-2, 2, 2)
    out, valid = warp_image(img, Homography.translation(du, dv))
    H, W = img.data.shape
    for v in range(H):
        for u in range(W):
            ref = _lerp_reference(img.data, u + du, v + dv)
            if ref is None:
                assert valid[v, u] == 0.0
            else:
                assert valid[v, u] == 1.0
                assert abs(out.data[v, u] - ref) < 1e-12


def test_warp_round_trip_smooth():
    img = smooth_image()
    h = Homography([[1.01, 0.02, 1.3], [-0.015, 0.99, -0.7], [1e-4, -5e-5, 1.0]])
    fwd, _ = warp_image(img, h)
    back, valid = warp_image(fwd, h.inverse())
    fwd_valid, _ = warp_image(GrayImage(np.ones_like(img.data)), h)
    # only pixels whose whole chain stayed inside the image
    inner, _ = warp_image(fwd_valid, h.inverse())
    m = (valid > 0) & (inner.data > 1 - 1e-12)
    assert m.sum() > 0.5 * m.size
    assert np.mean(np.abs(back.data - img.data)[m]) < 2e-2


def test_warp_needs_pixel_frame(rng):
    with pytest.raises(ValueError):
        warp_image(textured(rng), Homography.identity(NORMALIZED))


def test_warp_point_at_infinity():
    img = GrayImage(np.zeros((5, 5)))
    h = Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.5, 0.0, 1.0]])
    with pytest.raises(DegenerateTransfer):
        warp_image(img, h)


# -- SSIM -------------------------------------------------------------------------

def test_ssim_identical(rng):
    a = textured(rng)
    np.testing.assert_allclose(ssim_map(a, a), 1.0, atol=1e-12)


def test_ssim_constant_images():
    a = GrayImage(np.full((6, 6), 0.5))
    np.testing.assert_allclose(ssim_map(a, a), 1.0, atol=1e-15)


def _ssim_at(a, b, v, u):
    """SSIM at one pixel from an explicit 3x3 window over reflect-padded images."""
    pa = np.pad(a, 1, mode="reflect")
    pb = np.pad(b, 1, mode="reflect")
    wa = pa[v:v + 3, u:u + 3].ravel()
    wb = pb[v:v + 3, u:u + 3].ravel()
    ma, mb = wa.mean(), wb.mean()
    va = np.mean((wa - ma) ** 2)
    vb = np.mean((wb - mb) ** 2)
    cov = np.mean((wa - ma) * (wb - mb))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))


def test_ssim_against_direct_formula(rng):
    a = textured(rng)
    b = GrayImage(np.clip(a.data + 0.1, 0, 1))
    s = ssim_map(a, b)
    for v, u in [(5, 7), (12, 3), (0, 0)]:
        assert abs(s[v, u] - _ssim_at(a.data, b.data, v, u)) < 1e-12


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim_map(np.zeros((3, 3)), np.zeros((3, 4)))


# -- photometric loss ------------------------------------------------------------

def test_photometric_identical(rng):
    a = textured(rng)
    loss, _ = photometric_loss(a, a, np.ones(a.data.shape))
    assert abs(loss) < 1e-12


def test_photometric_alpha_zero_is_l1(rng):
    a, b = textured(rng), textured(rng)
    valid = (rng.random(a.data.shape) > 0.3).astype(float)
    loss, _ = photometric_loss(a, b, valid, alpha=0.0)
    assert abs(loss - np.mean(np.abs(a.data - b.data)[valid > 0])) < 1e-15


def test_photometric_constant_images_closed_form():
    a = GrayImage(np.full((8, 8), 0.3))
    b = GrayImage(np.full((8, 8), 0.5))
    # zero variance: SSIM reduces to the luminance term
    c1 = 0.01 ** 2
    ssim = (2 * 0.3 * 0.5 + c1) / (0.3 ** 2 + 0.5 ** 2 + c1)
    loss, _ = photometric_loss(a, b, np.ones((8, 8)), alpha=0.85)
    assert abs(loss - (0.85 / 2 * (1 - ssim) + 0.15 * 0.2)) < 1e-12


def test_photometric_empty_mask(rng):
    a = textured(rng)
    with pytest.raises(EmptyMask):
        photometric_loss(a, a, np.zeros(a.data.shape))


def test_photometric_alpha_range(rng):
    a = textured(rng)
    with pytest.raises(ValueError):
        photometric_loss(a, a, np.ones(a.data.shape), alpha=1.5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), alpha=st.floats(0.0, 1.0))
def test_photometric_self_is_zero(seed, alpha):
    a = GrayImage(np.random.default_rng(seed).random((7, 9)))
    loss, _ = photometric_loss(a, a, np.ones((7, 9)), alpha)
    assert abs(loss) < 1e-12


# -- explainability ----------------------------------------------------------------

def test_explainability_unit_mask_equals_photometric(rng):
    a, b = textured(rng), textured(rng)
    valid = np.ones(a.data.shape)
    mean, lmap = photometric_loss(a, b, valid)
    assert abs(explainability_loss(lmap, np.ones_like(lmap), valid, 0.0) - mean) < 1e-15


def test_explainability_zero_mask(rng):
    lmap = rng.random((5, 5))
    assert explainability_loss(lmap, np.zeros((5, 5)), np.ones((5, 5)), 0.0) == 0.0


def test_explainability_hand_value():
    got = explainability_loss(np.full((4, 4), 0.2), np.full((4, 4), 0.5), np.ones((4, 4)), 2e-3)
    assert abs(got - (0.1 + 2e-3 * -np.log(0.5))) < 1e-15


def test_explainability_clamps_zero():
    got = explainability_loss(np.ones((2, 2)), np.zeros((2, 2)), np.ones((2, 2)), 1.0)
    assert np.isfinite(got)
    assert abs(got + np.log(1e-6)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_explainability_monotone_in_e(seed):
    rng = np.random.default_rng(seed)
    L = rng.random((4, 4))
    E = rng.random((4, 4))
    E2 = E.copy()
    i = rng.integers(0, 4, 2)
    E2[i[0], i[1]] = min(1.0, E2[i[0], i[1]] + rng.random())
    valid = np.ones((4, 4))
    assert explainability_loss(L, E2, valid, 0.0) >= explainability_loss(L, E, valid, 0.0)


def test_explainability_domain():
    with pytest.raises(ValueError):
        explainability_loss(np.ones((2, 2)), np.full((2, 2), 1.2), np.ones((2, 2)), 0.0)
    with pytest.raises(ValueError):
        explainability_loss(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), -1.0)


# -- Laplacian ----------------------------------------------------------------------

def test_laplacian_unit():
    assert laplacian_nll_loss(np.ones((3, 3)), np.ones((3, 3)), np.ones((3, 3))) == 1.0


def test_laplacian_hand_value():
    got = laplacian_nll_loss(np.full((3, 3), 0.2), np.full((3, 3), 0.2), np.ones((3, 3)))
    assert abs(got - (1 + np.log(0.2))) < 1e-15


@pytest.mark.parametrize("L", [0.03, 0.2, 1.0, 7.5])
def test_laplacian_minimizer_is_loss(L):
    res = minimize_scalar(lambda b: laplacian_nll_loss(np.array([L]), np.array([b]),
                                                       np.array([1.0])),
                          bracket=(L / 3, L, 3 * L), tol=1e-12)
    assert abs(res.x - L) / L < 1e-6


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_laplacian_perturbation_increases_loss(seed):
    rng = np.random.default_rng(seed)
    L = rng.uniform(0.05, 2.0, (4, 4))
    valid = np.ones((4, 4))
    base = laplacian_nll_loss(L, L, valid)
    i = tuple(rng.integers(0, 4, 2))
    for s in (0.9, 1.1):
        b = L.copy()
        b[i] *= s
        assert laplacian_nll_loss(L, b, valid) > base


def test_laplacian_errors():
    with pytest.raises(NonPositiveScale):
        laplacian_nll_loss(np.ones((2, 2)), np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(EmptyMask):
        laplacian_nll_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2)))
    # non-positive scale outside the mask is ignored
    b = np.ones((2, 2))
    b[0, 0] = 0.0
    valid = np.ones((2, 2))
    valid[0, 0] = 0.0
    assert laplacian_nll_loss(np.ones((2, 2)), b, valid) == 1.0


def test_laplacian_pdf_and_variance():
    from scipy.integrate import quad
    b = 0.7
    assert abs(quad(lambda x: laplacian_pdf(x, 0.3, b), -np.inf, np.inf)[0] - 1) < 1e-9
    var = quad(lambda x: (x - 0.3) ** 2 * laplacian_pdf(x, 0.3, b), -np.inf, np.inf)[0]
    assert abs(var - laplacian_variance(b)) < 1e-9


# -- I/O -------------------------------------------------------------------------------

@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip(tmp_path, rng, maxval):
    img = GrayImage(np.round(rng.random((6, 9)) * maxval) / maxval)
    path = tmp_path / "a.pgm"
    write_pgm(path, img, maxval)
    np.testing.assert_allclose(read_pgm(path).data, img.data, atol=1e-12)


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(path).data, [[0.0, 1.0]])


def test_grid_csv(tmp_path):
    path = tmp_path / "g.csv"
    write_grid_csv(path, [[0.1, 0.2], [0.3, 0.4]])
    rows = path.read_text().splitlines()
    assert rows == ["0.1,0.2", "0.3,0.4"]
