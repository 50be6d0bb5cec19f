"""Special functions, distribution functions and samplers.

Everything downstream (effect sizes, pooling, magnitude inference, the
simulation engine) goes through this module for its normal, noncentral F and
noncentral chi-square computations.

The noncentral CDFs are Poisson mixtures of central CDFs.  The mixture is
summed over a window centred on the Poisson mode and widened until the
neglected Poisson mass falls below ``_POISSON_TAIL``, which keeps the sum
stable for large noncentralities where the j = 0 term underflows.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

__all__ = [
    "DomainError",
    "NoncentralFParams",
    "FoldedNormalMoments",
    "normal_cdf",
    "normal_pdf",
    "normal_quantile",
    "t_quantile",
    "reg_inc_beta",
    "noncentral_f_cdf",
    "noncentral_f_moments",
    "noncentral_chi2_cdf",
    "chi2_sf",
    "solve_ncp",
    "solve_ncp_chi2",
    "folded_normal_moments",
    "hedges_j",
    "hedges_j_approx",
    "sample_scaled_noncentral_t",
]

_POISSON_TAIL = 1e-14
_MAX_DOUBLINGS = 200


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


def _check_df(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class NoncentralFParams:
    """Parameters of the (singly) noncentral F distribution F_{nu1,nu2}(lambda2)."""

    nu1: int
    nu2: int
    lambda2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "nu1", _check_df(self.nu1, "nu1"))
        object.__setattr__(self, "nu2", _check_df(self.nu2, "nu2"))
        lam = float(self.lambda2)
        if not lam >= 0.0 or not math.isfinite(lam):
            raise DomainError(f"lambda2 must be finite and >= 0, got {self.lambda2!r}")
        object.__setattr__(self, "lambda2", lam)


@dataclass(frozen=True)
class FoldedNormalMoments:
    mean_f: float
    var_f: float


# ---------------------------------------------------------------------------
# normal distribution


def normal_cdf(x):
    return special.ndtr(x)


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def normal_quantile(p):
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"normal_quantile needs 0 < p < 1, got {p!r}")
    return special.ndtri(p)


def t_quantile(p, df: int):
    """Quantile of Student's t with ``df`` degrees of freedom."""
    df = _check_df(df, "df")
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"t_quantile needs 0 < p < 1, got {p!r}")
    return special.stdtrit(df, p)


# ---------------------------------------------------------------------------
# incomplete beta and noncentral F


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise DomainError(f"reg_inc_beta needs a > 0 and b > 0, got a={a!r}, b={b!r}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(~((x_arr >= 0.0) & (x_arr <= 1.0))):
        raise DomainError(f"reg_inc_beta needs 0 <= x <= 1, got {x!r}")
    return special.betainc(a, b, x_arr)


def _poisson_window(mu: float):
    """Indices and Poisson(mu) weights covering all but _POISSON_TAIL of the mass."""
    if mu == 0.0:
        return np.zeros(1), np.ones(1)
    mode = math.floor(mu)
    half = 10.0 * math.sqrt(mu) + 20.0
    while True:
        lo = max(0, int(mode - half))
        hi = int(mode + half) + 1
        neglected = special.pdtrc(hi, mu) + (special.pdtr(lo - 1, mu) if lo > 0 else 0.0)
        if neglected < _POISSON_TAIL:
            break
        half *= 2.0
    j = np.arange(lo, hi + 1, dtype=float)
    w = np.exp(j * math.log(mu) - mu - special.gammaln(j + 1.0))
    return j, w


def _ncf_cdf(x: float, nu1: int, nu2: int, lambda2: float) -> float:
    if x <= 0.0:
        return 0.0
    y = nu1 * x / (nu1 * x + nu2)
    if lambda2 == 0.0:
        return float(special.betainc(0.5 * nu1, 0.5 * nu2, y))
    j, w = _poisson_window(0.5 * lambda2)
    terms = special.betainc(0.5 * nu1 + j, 0.5 * nu2, y)
    return float(min(1.0, np.dot(w, terms)))


def noncentral_f_cdf(x: float, params: NoncentralFParams) -> float:
    """P(F <= x) for F ~ F_{nu1,nu2}(lambda2)."""
    x = float(x)
    if not x >= 0.0:
        raise DomainError(f"noncentral_f_cdf needs x >= 0, got {x!r}")
    return _ncf_cdf(x, params.nu1, params.nu2, params.lambda2)


def noncentral_f_moments(params: NoncentralFParams) -> tuple[float, float]:
    """Mean and variance of F_{nu1,nu2}(lambda2); needs nu2 > 4."""
    nu1, nu2, lam = params.nu1, params.nu2, params.lambda2
    if nu2 <= 4:
        raise DomainError("mean and variance need nu2 > 4")
    mean = nu2 * (nu1 + lam) / (nu1 * (nu2 - 2))
    var = (
        2.0
        * (nu2 / nu1) ** 2
        * ((nu1 + lam) ** 2 + (nu1 + 2 * lam) * (nu2 - 2))
        / ((nu2 - 2) ** 2 * (nu2 - 4))
    )
    return mean, var


# ---------------------------------------------------------------------------
# noncentral chi-square


def _ncx2_cdf(x: float, k: int, lambda2: float) -> float:
    if x <= 0.0:
        return 0.0
    if lambda2 == 0.0:
        return float(special.gammainc(0.5 * k, 0.5 * x))
    j, w = _poisson_window(0.5 * lambda2)
    terms = special.gammainc(0.5 * k + j, 0.5 * x)
    return float(min(1.0, np.dot(w, terms)))


def noncentral_chi2_cdf(x: float, k: int, lambda2: float) -> float:
    """P(X <= x) for X ~ chi2_k(lambda2)."""
    k = _check_df(k, "k")
    x = float(x)
    lambda2 = float(lambda2)
    if not x >= 0.0:
        raise DomainError(f"noncentral_chi2_cdf needs x >= 0, got {x!r}")
    if not lambda2 >= 0.0:
        raise DomainError(f"lambda2 must be >= 0, got {lambda2!r}")
    return _ncx2_cdf(x, k, lambda2)


def chi2_sf(x: float, k: int) -> float:
    """Upper tail of the central chi-square; accurate far into the tail."""
    k = _check_df(k, "k")
    if x <= 0.0:
        return 1.0
    return float(special.gammaincc(0.5 * k, 0.5 * x))


# ---------------------------------------------------------------------------
# noncentrality inversion


def _invert_decreasing(cdf, target: float, start: float = 1.0) -> float:
    """Root in lambda >= 0 of cdf(lambda) = target for a cdf decreasing in lambda.

    Returns 0 when cdf(0) <= target.
    """
    if cdf(0.0) <= target:
        return 0.0
    lo, hi = 0.0, max(start, 1.0)
    for _ in range(_MAX_DOUBLINGS):
        if cdf(hi) < target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ArithmeticError("could not bracket the noncentrality parameter")
    return optimize.brentq(lambda lam: cdf(lam) - target, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=500)


def solve_ncp(x: float, nu1: int, nu2: int, target: float) -> float:
    """Noncentrality lambda2 with P(F_{nu1,nu2}(lambda2) <= x) = target.

    Returns 0 when no positive solution exists.
    """
    nu1 = _check_df(nu1, "nu1")
    nu2 = _check_df(nu2, "nu2")
    if not 0.0 < target < 1.0:
        raise DomainError(f"target must lie in (0, 1), got {target!r}")
    x = float(x)
    if not x > 0.0:
        raise DomainError(f"x must be positive, got {x!r}")
    return _invert_decreasing(lambda lam: _ncf_cdf(x, nu1, nu2, lam), target, start=nu1 * x)


def solve_ncp_chi2(x: float, k: int, target: float) -> float:
    """Noncentrality lambda2 with P(chi2_k(lambda2) <= x) = target, or 0."""
    k = _check_df(k, "k")
    if not 0.0 < target < 1.0:
        raise DomainError(f"target must lie in (0, 1), got {target!r}")
    x = float(x)
    if not x > 0.0:
        raise DomainError(f"x must be positive, got {x!r}")
    return _invert_decreasing(lambda lam: _ncx2_cdf(x, k, lam), target, start=x)


# ---------------------------------------------------------------------------
# folded normal, Hedges's J


def folded_normal_moments(mu: float, sigma: float) -> FoldedNormalMoments:
    """Mean and variance of |y| for y ~ N(mu, sigma^2)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    r = mu / sigma
    mean_f = 2.0 * sigma * float(normal_pdf(r)) + mu * (1.0 - 2.0 * float(normal_cdf(-r)))
    var_f = max(mu * mu + sigma * sigma - mean_f * mean_f, 0.0)
    return FoldedNormalMoments(mean_f=mean_f, var_f=var_f)


def hedges_j(m: int) -> float:
    """Exact small-sample correction J(m) = Gamma(m/2) / (sqrt(m/2) Gamma((m-1)/2))."""
    m = _check_df(m, "m", minimum=2)
    return math.exp(math.lgamma(m / 2.0) - math.lgamma((m - 1) / 2.0) - 0.5 * math.log(m / 2.0))


def hedges_j_approx(m: int) -> float:
    m = _check_df(m, "m", minimum=2)
    return 1.0 - 3.0 / (4.0 * m - 1.0)


def _hedges_j_array(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.exp(special.gammaln(m / 2.0) - special.gammaln((m - 1.0) / 2.0) - 0.5 * np.log(m / 2.0))


# ---------------------------------------------------------------------------
# sampling


def sample_scaled_noncentral_t(m, ncp, scale, rng: np.random.Generator, size=None):
    """Draw ``scale * Z / sqrt(W / m)`` with Z ~ N(ncp, 1) and W ~ chi2_m.

    With ``scale = n_eff ** -0.5`` and ``ncp = sqrt(n_eff) * delta`` this is
    the sampling law of Cohen's d.  ``m``, ``ncp`` and ``scale`` broadcast.
    """
    m_arr = np.asarray(m)
    if np.any(m_arr < 1):
        raise DomainError("m must be >= 1")
    z = rng.normal(ncp, 1.0, size=size)
    w = rng.chisquare(m_arr, size=np.shape(z))
    return scale * z / np.sqrt(w / m_arr)
