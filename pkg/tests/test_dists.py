import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from magmeta.dists import (
    DomainError,
    NoncentralFParams,
    folded_normal_moments,
    hedges_j,
    hedges_j_approx,
    noncentral_chi2_cdf,
    noncentral_f_cdf,
    noncentral_f_moments,
    normal_cdf,
    normal_quantile,
    reg_inc_beta,
    sample_scaled_noncentral_t,
    solve_ncp,
)


def ncf(x, nu1, nu2, lam):
    return noncentral_f_cdf(x, NoncentralFParams(nu1, nu2, lam))


# --- normal ------------------------------------------------------------------


def test_normal_cdf_symmetry():
    assert normal_cdf(0.0) == 0.5


def test_normal_quantile_matches_bisection_oracle():
    # bisection on mpmath's erf at 40 digits gave 1.9599639845400542355
    assert normal_quantile(0.975) == pytest.approx(1.9599639845400542, abs=1e-12)
    assert round(float(normal_quantile(0.975)), 6) == 1.959964


def test_normal_cdf_far_tail_anchor():
    assert normal_cdf(-5.8799) == pytest.approx(2.052e-9, rel=0.02)


@pytest.mark.parametrize("x", np.linspace(-8, 8, 33))
def test_normal_cdf_absolute_error(x):
    mpmath.mp.dps = 30
    assert abs(normal_cdf(x) - float(mpmath.ncdf(x))) <= 1e-14


@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_normal_quantile_inverts_cdf(p):
    assert normal_cdf(normal_quantile(p)) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(p):
    with pytest.raises(DomainError):
        normal_quantile(p)


# --- incomplete beta ------------------------------------------------------------


def test_reg_inc_beta_trivial_cases():
    assert reg_inc_beta(0.3, 1, 1) == pytest.approx(0.3, rel=1e-14)
    assert reg_inc_beta(0.5, 2, 2) == pytest.approx(0.5, rel=1e-14)
    assert reg_inc_beta(0.0, 2.5, 3.5) == 0.0
    assert reg_inc_beta(1.0, 2.5, 3.5) == 1.0


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_reg_inc_beta_against_quadrature():
    dens = lambda t: t * (1 - t) ** 2 * 12.0
    expected = integrate.quad(dens, 0.0, 0.25, epsabs=1e-15, epsrel=1e-15)[0]
    assert expected == pytest.approx(0.26171875, rel=1e-13)
    assert reg_inc_beta(0.25, 2, 3) == pytest.approx(expected, rel=1e-12)


def test_reg_inc_beta_monotone():
    xs = np.linspace(0, 1, 201)
    vals = reg_inc_beta(xs, 3.5, 0.7)
    assert np.all(np.diff(vals) >= 0)


@pytest.mark.parametrize("a,b", [(0, 1), (1, 0), (-1, 2)])
def test_reg_inc_beta_domain(a, b):
    with pytest.raises(DomainError):
        reg_inc_beta(0.5, a, b)


# --- noncentral F -----------------------------------------------------------------


def test_ncf_support_boundary():
    assert ncf(0.0, 1, 10, 3.0) == 0.0


@pytest.mark.parametrize("x,nu1,nu2", [(0.5, 1, 5), (3.0, 1, 38), (2.2, 3, 12), (7.0, 2, 98)])
def test_ncf_central_reduction(x, nu1, nu2):
    assert ncf(x, nu1, nu2, 0.0) == pytest.approx(stats.f.cdf(x, nu1, nu2), abs=1e-12)


def test_ncf_central_t_oracle():
    # F_{1,nu} <= x  iff  |t_nu| <= sqrt(x)
    expected = 2 * stats.t.cdf(math.sqrt(3.8415), 10**6) - 1
    assert ncf(3.8415, 1, 10**6, 0.0) == pytest.approx(expected, abs=1e-10)
    assert ncf(3.8415, 1, 10**6, 0.0) == pytest.approx(0.95, abs=1e-4)


def test_ncf_monte_carlo_oracle():
    rng = np.random.default_rng(20240607)
    n, hits = 10**7, 0
    for _ in range(10):
        z = rng.standard_normal(n // 10)
        w = rng.chisquare(98, n // 10)
        hits += np.count_nonzero((z + 2.0) ** 2 / (w / 98) <= 5.0)
    p_mc = hits / n
    se = math.sqrt(p_mc * (1 - p_mc) / n)
    assert abs(ncf(5.0, 1, 98, 4.0) - p_mc) <= 3 * se


@pytest.mark.parametrize("x,nu1,nu2,lam", [(5.0, 1, 98, 4.0), (1.0, 1, 8, 0.3), (60.0, 1, 38, 50.0), (900.0, 1, 498, 800.0), (3.0, 4, 20, 12.0)])
def test_ncf_against_independent_scipy(x, nu1, nu2, lam):
    assert ncf(x, nu1, nu2, lam) == pytest.approx(stats.ncf.cdf(x, nu1, nu2, lam), abs=1e-10)


def test_ncf_monotone_on_grid():
    xs = np.linspace(0.01, 20, 25)
    lams = np.linspace(0, 30, 16)
    grid = np.array([[ncf(x, 1, 38, lam) for x in xs] for lam in lams])
    assert np.all(np.diff(grid, axis=1) >= -1e-15)  # nondecreasing in x
    assert np.all(np.diff(grid, axis=0) <= 1e-15)  # nonincreasing in lambda2


def test_ncf_invalid_params():
    with pytest.raises(DomainError):
        NoncentralFParams(0, 5, 1.0)
    with pytest.raises(DomainError):
        NoncentralFParams(1, 5.5, 1.0)
    with pytest.raises(DomainError):
        NoncentralFParams(1, 5, -1.0)
    with pytest.raises(DomainError):
        noncentral_f_cdf(-1.0, NoncentralFParams(1, 5, 1.0))


def test_ncf_moments_match_simulation_formula():
    mean, var = noncentral_f_moments(NoncentralFParams(1, 98, 25 * 0.25))
    assert mean == pytest.approx(98 / 96 * (1 + 6.25))
    rng = np.random.default_rng(3)
    x = (rng.standard_normal(10**6) + 2.5) ** 2 / (rng.chisquare(98, 10**6) / 98)
    assert abs(x.mean() - mean) < 3 * x.std() / 1e3
    assert x.var() == pytest.approx(var, rel=0.02)
    with pytest.raises(DomainError):
        noncentral_f_moments(NoncentralFParams(1, 4, 1.0))


# --- noncentral chi-square -----------------------------------------------------------


def test_ncx2_trivial():
    assert noncentral_chi2_cdf(0.0, 3, 2.0) == 0.0
    assert noncentral_chi2_cdf(3.8415, 1, 0.0) == pytest.approx(2 * normal_cdf(1.959964) - 1, abs=1e-5)
    assert noncentral_chi2_cdf(3.8415, 1, 0.0) == pytest.approx(0.95, abs=1e-4)


def test_ncx2_monte_carlo_oracle():
    rng = np.random.default_rng(77)
    n = 10**7
    hits = 0
    for _ in range(10):
        hits += np.count_nonzero(rng.noncentral_chisquare(5, 10.0, n // 10) <= 15.0)
    p_mc = hits / n
    se = math.sqrt(p_mc * (1 - p_mc) / n)
    assert abs(noncentral_chi2_cdf(15.0, 5, 10.0) - p_mc) <= 3 * se


@pytest.mark.parametrize("x,k,lam", [(15.0, 5, 10.0), (2.0, 1, 0.5), (400.0, 30, 350.0), (3000.0, 100, 2900.0)])
def test_ncx2_against_independent_scipy(x, k, lam):
    assert noncentral_chi2_cdf(x, k, lam) == pytest.approx(stats.ncx2.cdf(x, k, lam), abs=1e-10)


@pytest.mark.parametrize("x,k,lam", [(15.0, 5, 10.0), (2.0, 1, 3.0), (40.0, 3, 25.0)])
def test_ncf_converges_to_ncx2(x, k, lam):
    # F_{k,nu2}(lam) with nu2 -> inf behaves like chi2_k(lam) / k
    assert ncf(x / k, k, 10**7, lam) == pytest.approx(noncentral_chi2_cdf(x, k, lam), abs=1e-6)


def test_ncx2_domain():
    with pytest.raises(DomainError):
        noncentral_chi2_cdf(1.0, 0, 1.0)


# --- solve_ncp --------------------------------------------------------------------------


def test_solve_ncp_fixed_point_zero():
    target = ncf(3.0, 1, 38, 0.0)
    assert solve_ncp(3.0, 1, 38, target) == 0.0


def test_solve_ncp_no_positive_root():
    assert solve_ncp(0.01, 1, 38, 0.9) == 0.0


def test_solve_ncp_round_trip():
    p = ncf(12.0, 1, 38, 7.0)
    assert solve_ncp(12.0, 1, 38, p) == pytest.approx(7.0, abs=1e-6)


def test_solve_ncp_grid_oracle():
    # grid search of scipy's ncf over [13, 15] at step 1e-4 crossed 0.025 at 13.8319
    lam = solve_ncp(3.0, 1, 38, 0.025)
    assert lam == pytest.approx(13.8319, abs=1e-4)
    assert abs(ncf(3.0, 1, 38, lam) - 0.025) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(min_value=0.05, max_value=200.0),
    nu2=st.integers(min_value=5, max_value=500),
    target=st.floats(min_value=0.001, max_value=0.999),
)
def test_solve_ncp_inverse_property(x, nu2, target):
    lam = solve_ncp(x, 1, nu2, target)
    if lam > 0:
        assert abs(ncf(x, 1, nu2, lam) - target) <= 1e-9
    else:
        assert ncf(x, 1, nu2, 0.0) <= target


# --- folded normal ------------------------------------------------------------------------


def test_folded_normal_half_normal():
    fm = folded_normal_moments(0.0, 1.0)
    assert fm.mean_f == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)
    assert fm.var_f == pytest.approx(1 - 2 / math.pi, abs=1e-12)
    assert round(fm.mean_f, 6) == 0.797885
    assert round(fm.var_f, 6) == 0.363380


def test_folded_normal_far_from_zero():
    fm = folded_normal_moments(10.0, 1.0)
    assert abs(fm.mean_f - 10.0) < 1e-20 or fm.mean_f == 10.0


def test_folded_normal_quadrature_oracle():
    f = lambda y: abs(y) * stats.norm.pdf(y, 1.0, 2.0)
    mean = integrate.quad(f, -np.inf, 0)[0] + integrate.quad(f, 0, np.inf)[0]
    fm = folded_normal_moments(1.0, 2.0)
    assert fm.mean_f == pytest.approx(mean, abs=1e-10)
    assert fm.var_f == pytest.approx(1.0 + 4.0 - mean**2, abs=1e-10)


@given(st.floats(-20, 20), st.floats(0.01, 20))
def test_folded_normal_second_moment_identity(mu, sigma):
    fm = folded_normal_moments(mu, sigma)
    assert fm.var_f + fm.mean_f**2 == pytest.approx(mu * mu + sigma * sigma, rel=1e-12, abs=1e-12)


def test_folded_normal_domain():
    with pytest.raises(DomainError):
        folded_normal_moments(1.0, 0.0)


# --- Hedges's J ------------------------------------------------------------------------------


def test_hedges_j_approx_value():
    assert hedges_j_approx(10) == pytest.approx(1 - 3 / 39, abs=1e-15)
    assert round(hedges_j_approx(10), 6) == 0.923077


def test_hedges_j_exact_against_mpmath():
    mpmath.mp.dps = 40
    expected = mpmath.gamma(5) / (mpmath.sqrt(5) * mpmath.gamma(mpmath.mpf(9) / 2))
    assert hedges_j(10) == pytest.approx(float(expected), rel=1e-14)


def test_hedges_j_limit_and_large_m():
    assert 0.99999 < hedges_j(10**6) < 1.0
    assert 0.99 < hedges_j(1000) < 1.0  # beyond the range where Gamma overflows


@pytest.mark.parametrize("m", [20, 50, 200, 5000])
def test_hedges_j_approximation_error(m):
    assert abs(hedges_j(m) - hedges_j_approx(m)) < 1e-3


def test_hedges_j_domain():
    with pytest.raises(DomainError):
        hedges_j(1)


# --- sampler ------------------------------------------------------------------------------------


def test_sampler_symmetric_at_zero():
    rng = np.random.default_rng(11)
    d = sample_scaled_noncentral_t(98, 0.0, 0.2, rng, size=10**6)
    assert abs(d.mean()) < 4 * d.std() / 1e3


def test_sampler_second_moment():
    m, n_eff, delta = 98, 25.0, 0.5
    rng = np.random.default_rng(12)
    d = sample_scaled_noncentral_t(m, math.sqrt(n_eff) * delta, n_eff**-0.5, rng, size=10**6)
    expected = m / (m - 2) * (1 / n_eff + delta**2)
    assert abs(np.mean(d**2) - expected) < 3 * np.std(d**2) / 1e3
    # the same statement on the n_eff * d^2 scale
    x = n_eff * d**2
    assert abs(x.mean() - noncentral_f_moments(NoncentralFParams(1, m, n_eff * delta**2))[0]) < 3 * x.std() / 1e3


def test_sampler_ks_against_ncf():
    m, n_eff, delta = 38, 10.0, 0.4
    rng = np.random.default_rng(13)
    d = sample_scaled_noncentral_t(m, math.sqrt(n_eff) * delta, n_eff**-0.5, rng, size=10**5)
    lam = n_eff * delta**2
    res = stats.kstest(n_eff * d**2, lambda x: np.array([ncf(v, 1, m, lam) for v in np.atleast_1d(x)]))
    assert res.pvalue > 0.01


def test_sampler_deterministic():
    a = sample_scaled_noncentral_t(38, 1.0, 0.3, np.random.default_rng(5), size=10)
    b = sample_scaled_noncentral_t(38, 1.0, 0.3, np.random.default_rng(5), size=10)
    assert np.array_equal(a, b)
