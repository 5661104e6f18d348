import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import kv
from scipy.stats import norm

from fsagp.covkernels import (SMOOTH_FLOOR, SvParamField, TaperSpec, anisotropy_from_values, anisotropy_matrix,
                              bessel_k, default_params, implied_cov_y, kanter_taper, local_params, matern_corr,
                              nonstat_matern, norm_cdf, pair_cov, parent_cov, parent_cov_matrix, sv_distance,
                              sv_param_eval)
from fsagp.fsa import KnotSet

ORDERS = (0.1, 0.5, 1.0, 1.7, 2.5)
ARGS = tuple(np.logspace(-2, 2, 10))


def bessel_k_quad(nu, x):
    """K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, in 40-digit arithmetic.

    The factor exp(-x) is taken outside the integral.
    """
    with mpmath.workdps(40):
        nu, x = mpmath.mpf(nu), mpmath.mpf(x)
        f = lambda t: mpmath.exp(-x * (mpmath.cosh(t) - 1)) * mpmath.cosh(nu * t)
        # negligible once x (cosh t - 1) exceeds 200; the peak at 0 has width ~ 1/sqrt(x)
        upper = mpmath.acosh(1 + 200 / x) + 1
        w = 1 / mpmath.sqrt(x)
        pts = [0] + [w * 2**k for k in range(-2, 12) if w * 2**k < upper] + [upper]
        return float(mpmath.quad(f, pts) * mpmath.exp(-x))


@pytest.fixture(scope="module")
def bessel_oracle():
    return {(nu, x): bessel_k_quad(nu, x) for nu in ORDERS for x in ARGS}


def test_bessel_against_quadrature(bessel_oracle):
    assert len(bessel_oracle) == 50
    worst = max(abs(bessel_k(nu, x) / ref - 1) for (nu, x), ref in bessel_oracle.items())
    assert worst < 1e-10


@pytest.mark.parametrize("nu", [0.3, 1.0, 2.0, 2.9])
def test_bessel_matches_scipy(nu):
    for x in (0.05, 1.0, 1.99, 2.0, 2.01, 30.0):
        assert bessel_k(nu, x) == pytest.approx(kv(nu, x), rel=1e-12)


def test_bessel_half_order_closed_form():
    for x in (0.1, 1.0, 7.5):
        assert bessel_k(0.5, x) == pytest.approx(math.sqrt(math.pi / (2 * x)) * math.exp(-x), rel=1e-13)


def test_bessel_underflow_and_bad_input():
    assert bessel_k(1.0, 800.0) == 0.0
    with pytest.raises(ValueError):
        bessel_k(1.0, 0.0)
    with pytest.raises(ValueError):
        bessel_k(-1.0, 1.0)


H_GRID = np.concatenate([[0.01], np.arange(0.5, 10.01, 0.5)])


def test_matern_closed_forms():
    for h in H_GRID:
        assert matern_corr(h, 0.5) == pytest.approx(math.exp(-math.sqrt(2) * h), rel=1e-9)
        z = h * math.sqrt(6)
        assert matern_corr(h, 1.5) == pytest.approx((1 + z) * math.exp(-z), rel=1e-9)
    assert matern_corr(1.0, 0.5) == pytest.approx(0.2431167, abs=1e-7)
    assert matern_corr(1.0, 1.5) == pytest.approx(0.2978, abs=1e-4)
    assert matern_corr(0.0, 1.3) == 1.0


@given(st.floats(0.01, 3.0), st.floats(0.0, 20.0), st.floats(0.0, 5.0))
def test_matern_bounded_and_decreasing(nu, h, dh):
    a, b = matern_corr(h, nu), matern_corr(h + dh, nu)
    assert 0.0 <= b <= a + 1e-12 and a <= 1.0


def test_kanter_values():
    assert kanter_taper(0.0) == 1.0
    assert kanter_taper(1.2) == 0.0
    assert kanter_taper(1.0) == 0.0
    assert kanter_taper(0.5) == pytest.approx(2 / math.pi**2, rel=1e-12)
    eps = 1e-4
    assert abs(kanter_taper(eps) - 1) <= 1e-6
    assert abs(kanter_taper(1 - eps)) <= 1e-4
    np.testing.assert_allclose(kanter_taper(np.array([0.0, 0.5, 2.0])), [1.0, 2 / math.pi**2, 0.0])
    assert TaperSpec(6.5)(3.25) == pytest.approx(2 / math.pi**2)
    with pytest.raises(ValueError):
        TaperSpec(0.0)


@given(st.floats(0.0, 1.5))
def test_kanter_range(x):
    assert 0.0 <= kanter_taper(x) <= 1.0


def test_norm_cdf_against_scipy():
    x = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(norm_cdf(x), norm.cdf(x), atol=1e-12, rtol=0)


def test_sv_param_examples():
    sigma = SvParamField(math.log(3), transform="exp")
    assert sv_param_eval(sigma, [17.0]) == pytest.approx(3.0)
    smooth = SvParamField(0.0, transform="normcdf", cap=2.0)
    assert sv_param_eval(smooth, [5.0]) == pytest.approx(1.0)
    # basis value exactly 1 at the center
    one = SvParamField(0.0, coeffs=[0.25], basis_centers=[[5.0]], basis_scale=3.0, transform="normcdf", cap=2.0,
                       coeff_prior_var=0.0625)
    assert sv_param_eval(one, [5.0]) == pytest.approx(1.19742, abs=1e-5)
    assert sv_param_eval(one, [5.0]) == pytest.approx(2 * norm.cdf(0.25), rel=1e-12)


def test_sv_param_ranges_under_prior():
    rng = np.random.default_rng(1)
    centers = np.array([[0.2, 0.1], [0.8, 0.9], [0.5, 0.4]])
    locs = rng.random((50, 2))
    base = default_params(2, 0.0, 0.0, basis_centers=centers, basis_scale=0.3)
    for _ in range(1000):
        v = rng.normal(0, base.prior_sd_vector())
        p = base.with_free_vector(v)
        lp = local_params(p, locs)
        assert np.all(lp.sigma > 0)
        assert np.all((lp.smooth > 0) & (lp.smooth < 2))
        assert np.all(np.linalg.eigvalsh(lp.aniso) > 0)
        kap = p.angles[0].evaluate(locs)
        assert np.all((kap > 0) & (kap < math.pi / 2))


def test_anisotropy_examples():
    np.testing.assert_allclose(anisotropy_from_values([2.0, 2.0], [0.7]), 2 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(anisotropy_from_values([4.0, 1.0], [0.0]), np.diag([4.0, 1.0]))
    np.testing.assert_allclose(anisotropy_from_values([4.0, 1.0], [math.pi / 4]), [[2.5, 1.5], [1.5, 2.5]], atol=1e-14)
    A3 = anisotropy_from_values([3.0, 2.0, 1.0], [0.3, 0.6])
    np.testing.assert_allclose(np.linalg.eigvalsh(A3), [1.0, 2.0, 3.0])


def test_anisotropy_three_d_composition_order():
    k1, k2 = 0.3, 0.6
    c1, s1, c2, s2 = math.cos(k1), math.sin(k1), math.cos(k2), math.sin(k2)
    R12 = np.array([[c1, -s1, 0], [s1, c1, 0], [0, 0, 1]])
    R13 = np.array([[c2, 0, -s2], [0, 1, 0], [s2, 0, c2]])
    R = R13 @ R12
    expect = R @ np.diag([3.0, 2.0, 1.0]) @ R.T
    np.testing.assert_allclose(anisotropy_from_values([3.0, 2.0, 1.0], [k1, k2]), expect, atol=1e-14)


def test_vectorized_anisotropy_matches_pointwise():
    rng = np.random.default_rng(4)
    for d in (2, 3):
        p = default_params(d, 0.2, 0.5, basis_centers=rng.random((2, d)), basis_scale=0.5)
        p = p.with_free_vector(rng.normal(0, p.prior_sd_vector()))
        locs = rng.random((6, d))
        lp = local_params(p, locs)
        for i in range(6):
            np.testing.assert_allclose(lp.aniso[i], anisotropy_matrix(locs[i], p), rtol=1e-13, atol=1e-15)


def test_sv_distance_examples():
    s1, s2 = np.array([1.0, 2.0]), np.array([2.5, 0.0])
    I = np.eye(2)
    assert sv_distance(s1, s1, I, I) == 0.0
    assert sv_distance(s1, s2, I, I) == pytest.approx(np.linalg.norm(s1 - s2))
    assert sv_distance([0.0, 0.0], [2.0, 0.0], 4 * I, 4 * I) == pytest.approx(1.0)
    with pytest.raises(np.linalg.LinAlgError):
        sv_distance(s1, s2, -I, -I)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0, 1.5))
def test_sv_distance_symmetric(xy, g1, g2, k):
    A1 = anisotropy_from_values([g1, g2], [k])
    A2 = anisotropy_from_values([g2, 1.0], [k / 2])
    a, b = np.array(xy[:2]), np.array(xy[2:])
    assert sv_distance(a, b, A1, A2) == pytest.approx(sv_distance(b, a, A2, A1), rel=1e-12, abs=1e-300)


def test_nonstat_matern_examples():
    p = default_params(1, 0.0, math.log(600.0))
    assert nonstat_matern([3.0], [3.0], p) == 1.0
    # constant fields reduce to the stationary Matern at |h|/sqrt(gamma)
    for h in (0.5, 10.0, 80.0):
        expect = matern_corr(h / math.sqrt(600.0), 1.0)
        assert nonstat_matern([0.0], [h], p) == pytest.approx(expect, rel=1e-12)
    # d = 1 with Sigma_A = 1 and 9
    s1, s2 = 0.0, 1.0
    scale = SvParamField(0.0, coeffs=[math.log(9.0)], basis_centers=[[1.0]], basis_scale=1e-3, transform="exp",
                         coeff_prior_var=1.0)
    p2 = default_params(1, 0.0, 0.0)
    p2 = p2.with_fields([p2.sigma, p2.smooth, scale])
    lp = local_params(p2, [s1, s2])
    np.testing.assert_allclose(lp.aniso[:, 0, 0], [1.0, 9.0])
    q = math.sqrt(2 * 1.0 / 10.0)
    c = math.sqrt(3) / math.sqrt(5)
    assert c == pytest.approx(0.774597, abs=1e-6)
    assert nonstat_matern([s1], [s2], p2) == pytest.approx(c * matern_corr(q, 1.0), rel=1e-12)


def test_stationary_reduction_two_d():
    p = default_params(2, 0.0, math.log(2.5), basis_centers=[[0.0, 0.0]], basis_scale=1.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.normal(size=2), rng.normal(size=2)
        expect = matern_corr(np.linalg.norm(a - b) / math.sqrt(2.5), 1.0)
        assert nonstat_matern(a, b, p) == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_parent_cov_examples():
    p = default_params(1, math.log(3.0), math.log(600.0))
    assert parent_cov([4.0], [4.0], p) == pytest.approx(9.0)
    assert parent_cov([0.0], [10.0], p) == pytest.approx(9 * matern_corr(10 / math.sqrt(600), 1.0), rel=1e-12)


def test_smoothness_floor():
    smooth = SvParamField(-40.0, transform="normcdf", cap=2.0)
    p = default_params(1, 0.0, 0.0)
    p = p.with_fields([p.sigma, smooth, p.scales[0]])
    val = nonstat_matern([0.0], [0.3], p)
    assert val == pytest.approx(matern_corr(0.3, SMOOTH_FLOOR), rel=1e-12)


def random_params(rng, d, n_centers=3):
    p = default_params(d, 0.0, math.log(0.3), basis_centers=rng.random((n_centers, d)), basis_scale=0.4)
    return p.with_free_vector(rng.normal(0, p.prior_sd_vector()))


def test_vectorized_cov_matches_pointwise():
    rng = np.random.default_rng(7)
    for d in (1, 2, 3):
        p = random_params(rng, d)
        locs = rng.random((8, d))
        C = parent_cov_matrix(p, locs)
        for i in range(8):
            for j in range(8):
                assert C[i, j] == pytest.approx(parent_cov(locs[i], locs[j], p), rel=1e-11, abs=1e-14)
        I, J = np.triu_indices(8)
        np.testing.assert_allclose(pair_cov(local_params(p, locs), I, J), C[I, J], rtol=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_implied_cov_gram_psd(d):
    rng = np.random.default_rng(11 + d)
    taper = TaperSpec(0.5)
    for _ in range(3):
        p = random_params(rng, d)
        locs = rng.random((30, d))
        knots = KnotSet(rng.random((5, d)), d)
        G = np.array([[implied_cov_y(a, b, p, knots, taper) for b in locs] for a in locs])
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        ev = np.linalg.eigvalsh(G)
        assert ev.min() >= -1e-8 * ev.max()


def test_implied_cov_examples():
    rng = np.random.default_rng(0)
    p = random_params(rng, 1)
    taper = TaperSpec(2.0)
    knots = KnotSet([[0.3], [0.9]], 1)
    from fsagp.fsa import predictive_cov

    # beyond the taper range only the predictive part remains
    assert implied_cov_y([0.0], [3.0], p, knots, taper) == pytest.approx(float(predictive_cov([0.0], [3.0], p, knots)[0, 0]),
                                                                      rel=1e-14)
    # at a knot the predictive process interpolates the parent
    assert implied_cov_y([0.3], [0.3], p, knots, taper) == pytest.approx(parent_cov([0.3], [0.3], p), rel=1e-10)
    empty = KnotSet(np.zeros((0, 1)), 1)
    expect = float(taper(0.4)) * parent_cov([0.1], [0.5], p)
    assert implied_cov_y([0.1], [0.5], p, empty, taper) == pytest.approx(expect, rel=1e-14)
