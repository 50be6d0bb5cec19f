"""Between-study variance estimation and pooling of signed SMDs.

Three heterogeneity estimators are provided:

* ``MP``  - Mandel-Paule: solves Q(tau2) = K - 1 with inverse-variance weights.
* ``SSC`` - moment estimator from the generalised Q with fixed weights equal
  to the effective sample sizes.
* ``KDB`` - corrected-moment estimator.  Its correction terms are not part of
  this package; register them with :func:`register_kdb`.  Without a
  registration the Mandel-Paule value is returned under the KDB tag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .dists import DomainError, normal_quantile, t_quantile
from .effects import EffectSet, EffectsLike, IntervalEstimate, as_effect_set

logger = logging.getLogger(__name__)

__all__ = [
    "Tau2Estimate",
    "PooledDelta",
    "TAU2_METHODS",
    "generalized_q",
    "q_profile",
    "tau2_mp",
    "tau2_ssc",
    "tau2_kdb",
    "estimate_tau2",
    "register_kdb",
    "clear_kdb",
    "method_weights",
    "pool_delta",
    "critical_value",
]

TAU2_METHODS = ("MP", "KDB", "SSC")


@dataclass(frozen=True)
class Tau2Estimate:
    value: float
    method: str
    truncated: bool = False

    def __post_init__(self):
        if not self.value >= 0.0:
            raise DomainError(f"tau2 must be >= 0, got {self.value!r}")


@dataclass(frozen=True)
class PooledDelta:
    estimate: float
    std_err: float
    weights: np.ndarray
    method: str

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def z(self) -> float:
        return self.estimate / self.std_err


def _usable(effects: EffectsLike) -> EffectSet:
    es = as_effect_set(effects)
    keep = es.m > 4
    if not np.all(keep):
        logger.warning("excluding %d studies with m <= 4 from weighted pooling", int(np.sum(~keep)))
        es = es.subset(keep)
    if es.k < 2:
        raise DomainError("at least two studies with m > 4 are needed")
    return es


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise DomainError("weights must be finite and strictly positive")
    return w


def generalized_q(effects: EffectsLike, weights) -> float:
    """Q = sum w_i (g_i - weighted mean)^2 for arbitrary positive weights."""
    es = as_effect_set(effects)
    if es.k < 2:
        raise DomainError("Q needs at least two studies")
    w = _check_weights(weights)
    if len(w) != es.k:
        raise DomainError("weights and effects differ in length")
    return _q(es.g, w)


def _q(y: np.ndarray, w: np.ndarray) -> float:
    mean = np.dot(w, y) / w.sum()
    return float(np.dot(w, np.square(y - mean)))


def q_profile(effects: EffectsLike, tau2: float) -> float:
    """Cochran's Q with inverse-variance weights 1/(v_i^2 + tau2)."""
    es = as_effect_set(effects)
    return _q(es.g, 1.0 / (es.var_g + tau2))


def _solve_q_equation(es: EffectSet, rhs: Callable[[float], float], method: str) -> Tau2Estimate:
    """Solve Q_IV(tau2) = rhs(tau2) on [0, inf); truncate at zero."""

    def f(t):
        return _q(es.g, 1.0 / (es.var_g + t)) - rhs(t)

    f0 = f(0.0)
    if f0 < 0.0:
        return Tau2Estimate(0.0, method, truncated=True)
    if f0 == 0.0:
        return Tau2Estimate(0.0, method, truncated=False)
    hi = float(np.max(np.square(es.g - es.g.mean())))
    hi = max(hi, 1e-8)
    lo = 0.0
    for _ in range(200):
        if f(hi) < 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ArithmeticError("could not bracket tau2")
    root = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=500)
    return Tau2Estimate(float(root), method, truncated=False)


def tau2_mp(effects: EffectsLike) -> Tau2Estimate:
    es = _usable(effects)
    dof = es.k - 1.0
    return _solve_q_equation(es, lambda t: dof, "MP")


def tau2_ssc(effects: EffectsLike) -> Tau2Estimate:
    es = _usable(effects)
    w = es.n_eff
    v2 = es.var_g
    sw = w.sum()
    q = _q(es.g, w)
    num = q - (np.dot(w, v2) - np.dot(w * w, v2) / sw)
    den = sw - np.dot(w, w) / sw
    if num <= 0.0:
        return Tau2Estimate(0.0, "SSC", truncated=num < 0.0)
    return Tau2Estimate(float(num / den), "SSC", truncated=False)


# KDB plugin slot ----------------------------------------------------------

_kdb_correction: Optional[Callable[[float, EffectSet], float]] = None
_kdb_estimator: Optional[Callable[[EffectSet], float]] = None
_kdb_notice_logged = False


def register_kdb(
    correction: Optional[Callable[[float, EffectSet], float]] = None,
    estimator: Optional[Callable[[EffectSet], float]] = None,
) -> None:
    """Install the KDB implementation.

    ``correction(tau2, effects)`` returns the O(1/n) correction to the
    expected value of Q, so the estimator solves Q(tau2) = K - 1 + correction.
    Alternatively ``estimator(effects)`` returns the tau2 value directly.
    """
    global _kdb_correction, _kdb_estimator
    if (correction is None) == (estimator is None):
        raise ValueError("register exactly one of correction or estimator")
    _kdb_correction, _kdb_estimator = correction, estimator


def clear_kdb() -> None:
    global _kdb_correction, _kdb_estimator
    _kdb_correction = _kdb_estimator = None


def tau2_kdb(effects: EffectsLike) -> Tau2Estimate:
    global _kdb_notice_logged
    es = _usable(effects)
    if _kdb_estimator is not None:
        value = float(_kdb_estimator(es))
        return Tau2Estimate(max(value, 0.0), "KDB", truncated=value < 0.0)
    if _kdb_correction is not None:
        dof = es.k - 1.0
        corr = _kdb_correction
        return _solve_q_equation(es, lambda t: dof + corr(t, es), "KDB")
    if not _kdb_notice_logged:
        logger.warning("no KDB correction registered; using the Mandel-Paule estimate for KDB")
        _kdb_notice_logged = True
    mp = tau2_mp(es)
    return Tau2Estimate(mp.value, "KDB", mp.truncated)


_ESTIMATORS = {"MP": tau2_mp, "KDB": tau2_kdb, "SSC": tau2_ssc}


def estimate_tau2(effects: EffectsLike, method: str) -> Tau2Estimate:
    try:
        return _ESTIMATORS[method](effects)
    except KeyError:
        raise DomainError(f"unknown tau2 method {method!r}") from None


# pooling --------------------------------------------------------------------


def method_weights(es: EffectSet, tau2: Tau2Estimate) -> np.ndarray:
    if tau2.method == "SSC":
        return es.n_eff.astype(float)
    return 1.0 / (es.var_g + tau2.value)


def critical_value(crit: str, alpha: float, k: int) -> float:
    """Two-sided critical value c_{1-alpha/2} from the normal or t_{K-1}."""
    if crit == "normal":
        return float(normal_quantile(1.0 - alpha / 2.0))
    if crit == "t":
        return float(t_quantile(1.0 - alpha / 2.0, k - 1))
    raise DomainError(f"unknown critical-value reference {crit!r}")


def pool_delta(
    effects: EffectsLike,
    tau2: Tau2Estimate,
    crit: str = "normal",
    alpha: float = 0.05,
    weights=None,
):
    """Weighted mean of Hedges's g with its random-effects standard error.

    Weights default to 1/(v_i^2 + tau2) for MP/KDB and to the effective
    sample sizes for SSC.  The standard error is
    sqrt(sum w_i^2 (v_i^2 + tau2)) / sum w_i, which reduces to
    1/sqrt(sum w_i) for inverse-variance weights.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    es = _usable(effects)
    w = method_weights(es, tau2) if weights is None else _check_weights(weights)
    if len(w) != es.k:
        raise DomainError("weights and effects differ in length")
    sw = w.sum()
    if not np.isfinite(sw) or sw <= 0.0:
        raise DomainError("degenerate weights")
    est = float(np.dot(w, es.g) / sw)
    se = float(np.sqrt(np.dot(w * w, es.var_g + tau2.value)) / sw)
    tag = tau2.method + ("_t" if crit == "t" else "")
    c = critical_value(crit, alpha, es.k)
    pooled = PooledDelta(est, se, w, tag)
    return pooled, IntervalEstimate(est - c * se, est + c * se, 1.0 - alpha, tag)
