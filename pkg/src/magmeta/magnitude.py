"""Inference for the squared SMD delta^2 (and |delta|) across studies.

Three families are covered:

* common-effect inference from sum(n_eff_i * d_i^2): point estimate, test of
  delta^2 = 0 and chi-square-profile interval;
* random-effects inference built on a signed-SMD meta-analysis: the point
  estimate delta2_hat - tau2_hat, and naive or corrected intervals obtained by
  squaring an interval for delta;
* inference conditional on tau2_hat through
  Lambda(tau2) = sum n_eff_i d_i^2 / (1 + n_eff_i tau2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import optimize, special

from .dists import (
    DomainError,
    _ncx2_cdf,
    chi2_sf,
    normal_cdf,
    solve_ncp_chi2,
)
from .effects import EffectsLike, IntervalEstimate, as_effect_set
from .pooling import PooledDelta, Tau2Estimate

__all__ = [
    "MagnitudeEstimate",
    "TestResult",
    "EmpiricalDistribution",
    "REFERENCES",
    "ce_delta2",
    "ce_statistic",
    "ce_test",
    "ce_profile_ci",
    "rem_point_estimate",
    "naive_ci_delta2",
    "extra_coverage_same_sign",
    "extra_coverage_straddle",
    "solve_beta",
    "inflate_alpha",
    "corrected_ci_delta2",
    "lambda_statistic",
    "conditional_test",
    "conditional_profile_ci",
    "bootstrap_sum_f",
]

CHI2 = "chi2_K"
BOOTSTRAP = "bootstrap_sum_F"
REFERENCES = (CHI2, BOOTSTRAP)
DEFAULT_BOOTSTRAP_B = 10_000


@dataclass(frozen=True)
class MagnitudeEstimate:
    delta2: float
    delta2_truncated: float
    tau2_method: str


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reference: str

    @property
    def reject_at_05(self) -> bool:
        return self.p_value < 0.05


class EmpiricalDistribution:
    """Immutable sample from a null distribution, queried for tails and quantiles."""

    def __init__(self, draws):
        draws = np.sort(np.asarray(draws, dtype=float))
        draws.setflags(write=False)
        self._draws = draws

    @property
    def draws(self) -> np.ndarray:
        return self._draws

    @property
    def size(self) -> int:
        return len(self._draws)

    def mean(self) -> float:
        return float(self._draws.mean())

    def sf(self, x: float) -> float:
        """Bootstrap p-value (1 + #{draws >= x}) / (B + 1)."""
        n_ge = self.size - np.searchsorted(self._draws, x, side="left")
        return (1.0 + n_ge) / (self.size + 1.0)

    def cdf(self, x: float) -> float:
        return np.searchsorted(self._draws, x, side="right") / self.size

    def quantile(self, q: float) -> float:
        return float(np.quantile(self._draws, q))


def bootstrap_sum_f(dfs, b: int, rng: np.random.Generator, chunk: int = 20_000) -> EmpiricalDistribution:
    """B draws of sum_i F_{1,m_i} (central)."""
    dfs = np.asarray(dfs)
    if b < 1:
        raise DomainError("bootstrap size must be >= 1")
    if dfs.ndim != 1 or len(dfs) == 0 or np.any(dfs < 1):
        raise DomainError("dfs must be a non-empty vector of positive integers")
    out = np.empty(b)
    mf = dfs.astype(float)
    for start in range(0, b, chunk):
        n = min(chunk, b - start)
        z2 = np.square(rng.standard_normal((n, len(dfs))))
        w = rng.chisquare(mf, size=(n, len(dfs)))
        out[start : start + n] = (z2 / (w / mf)).sum(axis=1)
    return EmpiricalDistribution(out)


# ---------------------------------------------------------------------------
# common-effect model


def ce_delta2(effects: EffectsLike) -> float:
    """n_eff-weighted mean of the per-study unbiased delta^2 estimates."""
    es = as_effect_set(effects)
    if es.k < 1:
        raise DomainError("no studies")
    return float(np.dot(es.n_eff, es.delta2_hat) / es.n_eff.sum())


def ce_statistic(effects: EffectsLike) -> float:
    es = as_effect_set(effects)
    return float(np.dot(es.n_eff, np.square(es.d)))


def _p_value(stat: float, es, reference: str, bootstrap_b: int, rng, null) -> float:
    if reference == CHI2:
        return chi2_sf(stat, es.k)
    if reference == BOOTSTRAP:
        if null is None:
            if rng is None:
                raise DomainError("bootstrap reference needs an rng or a precomputed null")
            if bootstrap_b < 1000:
                raise DomainError("bootstrap reference needs B >= 1000")
            null = bootstrap_sum_f(es.m, bootstrap_b, rng)
        return null.sf(stat)
    raise DomainError(f"unknown reference {reference!r}; expected one of {REFERENCES}")


def ce_test(
    effects: EffectsLike,
    reference: str = CHI2,
    bootstrap_b: int = DEFAULT_BOOTSTRAP_B,
    rng: Optional[np.random.Generator] = None,
    null: Optional[EmpiricalDistribution] = None,
) -> TestResult:
    """Test of delta^2 = 0 under the common-effect model.

    ``null`` may carry a precomputed sum-of-F distribution for the same
    degrees of freedom; it is reused instead of drawing a new one.
    """
    es = as_effect_set(effects)
    stat = ce_statistic(es)
    return TestResult(stat, _p_value(stat, es, reference, bootstrap_b, rng, null), reference)


def _profile_interval(x: float, k: int, scale: float, alpha: float, method: str) -> IntervalEstimate:
    """Invert chi2_k(scale * delta2) at the observed x for delta2."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    cdf0 = _ncx2_cdf(x, k, 0.0)
    lam_upper = 0.0 if cdf0 < alpha / 2 else solve_ncp_chi2(x, k, alpha / 2)
    lam_lower = 0.0 if cdf0 < 1.0 - alpha / 2 else solve_ncp_chi2(x, k, 1.0 - alpha / 2)
    return IntervalEstimate(lam_lower / scale, lam_upper / scale, 1.0 - alpha, method)


def ce_profile_ci(effects: EffectsLike, alpha: float = 0.05) -> IntervalEstimate:
    es = as_effect_set(effects)
    return _profile_interval(ce_statistic(es), es.k, float(es.n_eff.sum()), alpha, "CE_chi2_profile")


# ---------------------------------------------------------------------------
# random-effects point estimate and intervals from signed SMDs


def rem_point_estimate(effects: EffectsLike, tau2: Tau2Estimate) -> MagnitudeEstimate:
    value = ce_delta2(effects) - tau2.value
    return MagnitudeEstimate(value, max(value, 0.0), tau2.method)


def naive_ci_delta2(signed_ci: IntervalEstimate) -> IntervalEstimate:
    lo, hi = signed_ci.lower, signed_ci.upper
    if lo >= 0.0:
        bounds = (lo * lo, hi * hi)
    elif hi <= 0.0:
        bounds = (hi * hi, lo * lo)
    else:
        bounds = (0.0, max(lo * lo, hi * hi))
    return IntervalEstimate(bounds[0], bounds[1], signed_ci.level, signed_ci.method)


class _Reference:
    """Symmetric reference law G: standard normal, or Student t when df is set."""

    def __init__(self, df: Optional[int] = None):
        self.df = df

    def cdf(self, x):
        return normal_cdf(x) if self.df is None else special.stdtr(self.df, x)

    def sf(self, x):
        return self.cdf(-x)

    def ppf(self, p):
        return special.ndtri(p) if self.df is None else special.stdtrit(self.df, p)


def _reference_for(crit: str, k: int) -> _Reference:
    if crit == "normal":
        return _Reference()
    if crit == "t":
        return _Reference(k - 1)
    raise DomainError(f"unknown critical-value reference {crit!r}")


def _check_alpha_beta(alpha, beta):
    if not 0.0 < beta < alpha < 1.0:
        raise DomainError("need 0 < beta < alpha < 1")


def extra_coverage_same_sign(delta_over_se: float, alpha: float = 0.05, beta: float = 0.025, df=None) -> float:
    """P(-U < delta < -L) for a same-sign interval (L, U) for delta."""
    _check_alpha_beta(alpha, beta)
    G = _Reference(df)
    shift = 2.0 * delta_over_se
    return float(G.cdf(G.ppf(1.0 - beta) - shift) - G.cdf(G.ppf(alpha - beta) - shift))


def extra_coverage_straddle(delta_over_se: float, alpha: float = 0.05, beta: float = 0.025, df=None) -> float:
    """P(U < delta < -L) for an interval straddling zero with -L > U."""
    _check_alpha_beta(alpha, beta)
    G = _Reference(df)
    return float(min(G.cdf(G.ppf(alpha - beta)), G.cdf(G.ppf(1.0 - beta) - 2.0 * delta_over_se)))


def solve_beta(z: float, alpha: float, df=None) -> float:
    """Upper-tail share beta in (0, alpha) with c_{1-beta} + c_{alpha-beta} = 2z.

    Solved in u = c_{1-beta}, where the left side is increasing with slope
    at least one, so the residual is well conditioned even when beta is tiny.
    """
    G = _Reference(df)

    def h(u):
        # rounding can push alpha - sf(u) just below zero next to c_{1-alpha}
        p = max(alpha - float(G.sf(u)), 1e-300)
        return u + float(G.ppf(p)) - 2.0 * z

    # both ends come from lower-tail quantiles, which are exact by symmetry
    for frac in (1e-6, 1e-9, 1e-12, 1e-15):
        u_lo = -float(G.ppf(alpha * (1.0 - frac)))
        u_hi = -float(G.ppf(alpha * frac))
        below, above = h(u_lo) < 0.0, h(u_hi) > 0.0
        if below and above:
            break
    else:
        # |z| within rounding of the critical value: beta sits at a boundary
        return alpha * frac if below else alpha * (1.0 - frac)
    u = optimize.brentq(h, u_lo, u_hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return float(G.sf(u))


def inflate_alpha(z: float, gamma: float, df=None) -> float:
    """Nominal alpha whose same-sign interval has estimated level 1 - gamma.

    Solves gamma = alpha - P_hat(-U < delta < -L) with beta = alpha/2 and
    |delta_hat|/v plugged in for delta/v.
    """
    z = abs(z)

    def f(a):
        return a - extra_coverage_same_sign(z, a, a / 2.0, df) - gamma

    lo, hi = gamma, min(4.0 * gamma, 0.5 * (1.0 + gamma))
    if f(lo) >= 0.0:
        return gamma
    return float(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=500))


def corrected_ci_delta2(pooled: PooledDelta, alpha: float = 0.05, crit: str = "normal") -> IntervalEstimate:
    """Interval for delta^2 from a signed pooled estimate, corrected to level 1 - alpha.

    If the symmetric interval for delta straddles zero, the tail split is
    moved until -L = U and (0, L^2) is returned.  Otherwise alpha is
    inflated to offset the extra coverage from the mirrored interval.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    G = _reference_for(crit, pooled.k)
    est, se = pooled.estimate, pooled.std_err
    z = est / se
    c = float(G.ppf(1.0 - alpha / 2.0))
    tag = pooled.method[:-2] + "*_t" if pooled.method.endswith("_t") else pooled.method + "*"
    if abs(z) < c:
        beta = solve_beta(z, alpha, G.df)
        upper = est - float(G.ppf(alpha - beta)) * se
        return IntervalEstimate(0.0, upper * upper, 1.0 - alpha, tag)
    a = inflate_alpha(z, alpha, G.df)
    c = float(G.ppf(1.0 - a / 2.0))
    lo, hi = abs(est) - c * se, abs(est) + c * se
    return IntervalEstimate(lo * lo, hi * hi, 1.0 - alpha, tag)


# ---------------------------------------------------------------------------
# conditional inference given tau2_hat


def _tau2_value(tau2: Union[Tau2Estimate, float]) -> float:
    value = tau2.value if isinstance(tau2, Tau2Estimate) else float(tau2)
    if not value >= 0.0:
        raise DomainError(f"tau2 must be >= 0, got {value!r}")
    return value


def lambda_statistic(effects: EffectsLike, tau2_value: float) -> float:
    es = as_effect_set(effects)
    t = _tau2_value(tau2_value)
    return float(np.sum(es.n_eff * np.square(es.d) / (1.0 + es.n_eff * t)))


def conditional_test(
    effects: EffectsLike,
    tau2: Union[Tau2Estimate, float],
    reference: str = CHI2,
    bootstrap_b: int = DEFAULT_BOOTSTRAP_B,
    rng: Optional[np.random.Generator] = None,
    null: Optional[EmpiricalDistribution] = None,
) -> TestResult:
    """Test of delta^2 = 0 given tau2 through Lambda(tau2).

    Under the null Lambda(tau2) at the true tau2 is a sum of central
    F_{1,m_i} variates; passing the true tau2 gives the unconditional
    comparator test.
    """
    es = as_effect_set(effects)
    stat = lambda_statistic(es, _tau2_value(tau2))
    return TestResult(stat, _p_value(stat, es, reference, bootstrap_b, rng, null), reference)


def conditional_profile_ci(
    effects: EffectsLike, tau2: Union[Tau2Estimate, float], alpha: float = 0.05
) -> IntervalEstimate:
    es = as_effect_set(effects)
    t = _tau2_value(tau2)
    x = lambda_statistic(es, t)
    scale = float(np.sum(es.n_eff / (1.0 + es.n_eff * t)))
    method = (tau2.method if isinstance(tau2, Tau2Estimate) else "tau2") + "_c"
    return _profile_interval(x, es.k, scale, alpha, method)
