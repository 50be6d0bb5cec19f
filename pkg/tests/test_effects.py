import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magmeta.dists import DomainError, NoncentralFParams, hedges_j, noncentral_f_cdf, sample_scaled_noncentral_t
from magmeta.effects import (
    EffectSet,
    IntervalEstimate,
    StudySummary,
    delta4_unbiased,
    derive_effect,
    effect_from_d,
    steiger_ci,
    var_delta2_hat,
    var_delta2_true,
    var_g_estimate,
)


# --- StudySummary / derive_effect --------------------------------------------------


def test_equal_arms_equal_means_gives_zero():
    rec = derive_effect(StudySummary(20, 20, 1.0, 1.0, 2.0, 2.0))
    assert rec.d == 0.0
    assert rec.n_eff == 10.0
    assert rec.delta2_hat == pytest.approx(-0.1, abs=1e-15)


def test_delta2_hat_hand_value():
    rec = effect_from_d(math.sqrt(0.26), 50, 50)
    assert rec.m == 98 and rec.n_eff == 25.0
    assert rec.delta2_hat == pytest.approx(96 / 98 * 0.26 - 0.04, abs=1e-14)
    assert round(rec.delta2_hat, 6) == 0.214694


def test_raw_form_uses_pooled_sd():
    s = StudySummary(n_t=10, n_c=30, mean_t=5.0, mean_c=3.0, sd_t=2.0, sd_c=1.0)
    sp = math.sqrt((9 * 4.0 + 29 * 1.0) / 38)
    assert s.pooled_sd == pytest.approx(sp, rel=1e-15)
    rec = derive_effect(s)
    assert rec.d == pytest.approx(2.0 / sp, rel=1e-15)
    assert rec.m == 38
    assert rec.n_eff == pytest.approx(300 / 40)


def test_d_form_and_raw_form_agree():
    raw = derive_effect(StudySummary(25, 25, 1.5, 1.0, 1.0, 1.0))
    dform = derive_effect(StudySummary(25, 25, d=0.5))
    assert raw == dform


def test_record_invariants():
    rec = effect_from_d(0.7, 12, 33)
    assert rec.m == 43
    assert rec.n_eff <= min(12, 33)
    assert rec.g / rec.d == hedges_j(43)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_t=1, n_c=5, d=0.1),
        dict(n_t=5, n_c=5, mean_t=1.0, mean_c=0.0, sd_t=1.0, sd_c=1.0, d=0.3),
        dict(n_t=5, n_c=5, mean_t=1.0, mean_c=0.0, sd_t=1.0),
        dict(n_t=5, n_c=5, mean_t=1.0, mean_c=0.0, sd_t=0.0, sd_c=1.0),
        dict(n_t=5, n_c=5, d=float("nan")),
        dict(n_t=5.5, n_c=5, d=0.1),
    ],
)
def test_study_summary_rejects(kwargs):
    with pytest.raises(DomainError):
        StudySummary(**kwargs)


def test_small_m_flags_missing_variance(caplog):
    with caplog.at_level(logging.WARNING):
        rec = effect_from_d(0.4, 3, 3)
    assert rec.m == 4
    assert rec.var_delta2_hat is None
    assert not rec.variance_defined
    assert "undefined" in caplog.text


# --- moment formulas ------------------------------------------------------------------


def test_var_delta2_true_zero_delta():
    assert var_delta2_true(0.0, 100, 25.0) == pytest.approx(2 / 96 * 99 / 625, rel=1e-14)
    assert round(var_delta2_true(0.0, 100, 25.0), 4) == 0.0033


def test_var_delta2_true_hand_value():
    # (2/94) * (97/625 + 2*97*0.25/25 + 0.0625)
    assert var_delta2_true(0.25, 98, 25.0) == pytest.approx(0.04590851063829787, rel=1e-14)


def test_delta4_zero_d():
    assert delta4_unbiased(0.0, 38, 10.0) == pytest.approx(0.03, rel=1e-14)


@pytest.mark.parametrize("fn", [var_delta2_true, delta4_unbiased, var_delta2_hat])
def test_moment_formulas_need_m_above_4(fn):
    with pytest.raises(DomainError):
        fn(0.3, 4, 3.0)


@settings(max_examples=200)
@given(
    d=st.floats(-5, 5),
    m=st.integers(5, 2000),
    n_eff=st.floats(1.0, 1000.0),
)
def test_plugin_identity(d, m, n_eff):
    # Var formula with delta^2 and delta^4 replaced by their unbiased estimates
    d2h = (m - 2) / m * d * d - 1 / n_eff
    d4h = delta4_unbiased(d, m, n_eff)
    plug = 2 / (m - 4) * ((m - 1) / n_eff**2 + 2 * (m - 1) * d2h / n_eff + d4h)
    assert var_delta2_hat(d, m, n_eff) == pytest.approx(plug, rel=1e-9, abs=1e-12)


def test_var_g_estimate():
    assert var_g_estimate(0.5, 98, 25.0) == pytest.approx(0.04 + 0.25 / 196, rel=1e-15)


def test_unbiasedness_at_half_n100():
    m, n_eff, delta = 98, 25.0, 0.5
    rng = np.random.default_rng(101)
    d = sample_scaled_noncentral_t(m, math.sqrt(n_eff) * delta, n_eff**-0.5, rng, size=10**6)
    d2h = (m - 2) / m * d * d - 1 / n_eff
    assert abs(d2h.mean() - 0.25) < 3 * d2h.std() / 1e3
    # the empirical variance matches the closed form
    assert d2h.var() == pytest.approx(var_delta2_true(0.25, m, n_eff), rel=0.01)


def test_delta4_unbiased_monte_carlo():
    m, n_eff = 98, 25.0
    rng = np.random.default_rng(102)
    d = sample_scaled_noncentral_t(m, math.sqrt(n_eff), n_eff**-0.5, rng, size=10**6)
    d4h = delta4_unbiased(d, m, n_eff)
    assert abs(d4h.mean() - 1.0) < 3 * d4h.std() / 1e3


# --- EffectSet ---------------------------------------------------------------------------


def test_effect_set_matches_records():
    d = np.array([0.1, -0.4, 0.9])
    es = EffectSet.from_d(d, np.array([10, 20, 50]), np.array([12, 20, 48]))
    recs = [effect_from_d(x, a, b) for x, a, b in zip(d, [10, 20, 50], [12, 20, 48])]
    es2 = EffectSet.from_records(recs)
    for name in ("d", "g", "m", "n_eff", "var_g"):
        np.testing.assert_allclose(getattr(es, name), getattr(es2, name), rtol=1e-13)
    np.testing.assert_allclose(es.delta2_hat, [r.delta2_hat for r in recs], rtol=1e-13)
    assert es.k == 3
    for a, b in zip(es, recs):
        assert a.var_delta2_hat == pytest.approx(b.var_delta2_hat, rel=1e-12)


def test_effect_set_subset():
    es = EffectSet.from_d([0.1, 0.2, 0.3], 10, 10)
    sub = es.subset(np.array([True, False, True]))
    assert sub.k == 2 and list(sub.d) == [0.1, 0.3]


# --- IntervalEstimate ---------------------------------------------------------------------


def test_interval_basics():
    iv = IntervalEstimate(0.04, 0.36, 0.95, "x")
    assert iv.contains(0.1) and not iv.contains(0.5)
    assert iv.width == pytest.approx(0.32)
    r = iv.sqrt()
    assert (r.lower, r.upper) == pytest.approx((0.2, 0.6))
    with pytest.raises(DomainError):
        IntervalEstimate(1.0, 0.0, 0.95, "x")


# --- steiger_ci ------------------------------------------------------------------------------


def test_steiger_zero_d_degenerate():
    sq, ab = steiger_ci(0.0, 38, 10.0, 0.05)
    assert (sq.lower, sq.upper) == (0.0, 0.0)
    assert (ab.lower, ab.upper) == (0.0, 0.0)


def test_steiger_boundary_case_oracle():
    # n_eff * d^2 = 3.8415 with m = 10^6 sits at the 95th percentile of F_{1,m}(0)
    n_eff = 25.0
    d = math.sqrt(3.8415 / n_eff)
    sq, ab = steiger_ci(d, 10**6, n_eff, 0.05)
    assert sq.lower == 0.0
    # upper limit from brentq on scipy.stats.ncf
    assert sq.upper * n_eff == pytest.approx(15.365928281469726, abs=1e-6)
    assert ab.upper == pytest.approx(math.sqrt(sq.upper), rel=1e-15)


def test_steiger_interior_round_trip():
    m, n_eff, d = 38, 10.0, 1.2
    sq, _ = steiger_ci(d, m, n_eff, 0.05)
    x = n_eff * d * d
    assert sq.lower > 0
    assert noncentral_f_cdf(x, NoncentralFParams(1, m, sq.lower * n_eff)) == pytest.approx(0.975, abs=1e-9)
    assert noncentral_f_cdf(x, NoncentralFParams(1, m, sq.upper * n_eff)) == pytest.approx(0.025, abs=1e-9)


def test_steiger_monotone_in_d2():
    prev = (0.0, 0.0)
    for d in np.linspace(0, 2, 21):
        sq, ab = steiger_ci(d, 38, 10.0)
        assert sq.lower >= prev[0] - 1e-12 and sq.upper >= prev[1] - 1e-12
        assert ab.lower == pytest.approx(math.sqrt(sq.lower)) and ab.upper == pytest.approx(math.sqrt(sq.upper))
        prev = (sq.lower, sq.upper)


def test_steiger_alpha_domain():
    with pytest.raises(DomainError):
        steiger_ci(0.3, 38, 10.0, 1.0)
