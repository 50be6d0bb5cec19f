"""Per-study effect sizes for two-arm studies.

A study enters either as raw arm summaries (sizes, means, SDs) or as a
precomputed Cohen's d with its arm sizes; both normalize to an
:class:`EffectRecord`.  For vectorized work (pooling, simulation) a batch of
records is held column-wise in an :class:`EffectSet`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .dists import DomainError, _check_df, _hedges_j_array, _ncf_cdf, hedges_j, solve_ncp

logger = logging.getLogger(__name__)

__all__ = [
    "StudySummary",
    "EffectRecord",
    "EffectSet",
    "IntervalEstimate",
    "as_effect_set",
    "derive_effect",
    "effect_from_d",
    "var_g_estimate",
    "var_delta2_true",
    "var_delta2_hat",
    "delta4_unbiased",
    "steiger_ci",
]


@dataclass(frozen=True)
class StudySummary:
    """Two-arm study inputs, raw (means and SDs) or with a precomputed d."""

    n_t: int
    n_c: int
    mean_t: Optional[float] = None
    mean_c: Optional[float] = None
    sd_t: Optional[float] = None
    sd_c: Optional[float] = None
    d: Optional[float] = None
    study_id: Optional[str] = None

    def __post_init__(self):
        for name in ("n_t", "n_c"):
            if _check_df(getattr(self, name), name) < 2:
                raise DomainError(f"{name} must be >= 2")
        raw = (self.mean_t, self.mean_c, self.sd_t, self.sd_c)
        has_raw = [v is not None for v in raw]
        if self.d is not None:
            if any(has_raw):
                raise DomainError("give either raw arm summaries or d, not both")
            if not math.isfinite(self.d):
                raise DomainError("d must be finite")
        else:
            if not all(has_raw):
                raise DomainError("raw form needs mean_t, mean_c, sd_t and sd_c")
            if not (self.sd_t > 0 and self.sd_c > 0):
                raise DomainError("standard deviations must be positive")

    @property
    def is_raw(self) -> bool:
        return self.d is None

    @property
    def pooled_sd(self) -> float:
        if not self.is_raw:
            raise DomainError("pooled SD needs the raw form")
        num = (self.n_t - 1) * self.sd_t**2 + (self.n_c - 1) * self.sd_c**2
        return math.sqrt(num / (self.n_t + self.n_c - 2))


@dataclass(frozen=True)
class EffectRecord:
    d: float
    g: float
    m: int
    n_eff: float
    delta2_hat: float
    var_delta2_hat: Optional[float]
    var_g: float
    n_t: int = 0
    n_c: int = 0
    study_id: Optional[str] = None

    @property
    def variance_defined(self) -> bool:
        """Whether the variance of the squared-SMD estimate exists (m > 4)."""
        return self.m > 4


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DomainError(f"interval lower {self.lower} exceeds upper {self.upper}")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def sqrt(self, method: Optional[str] = None) -> "IntervalEstimate":
        """Interval for |delta| from an interval for delta^2."""
        return IntervalEstimate(
            math.sqrt(max(self.lower, 0.0)),
            math.sqrt(max(self.upper, 0.0)),
            self.level,
            method or self.method,
        )


# ---------------------------------------------------------------------------
# moment formulas (numpy-friendly)


def var_g_estimate(g, m, n_eff):
    """Large-sample variance of Hedges's g: 1/n_eff + g^2 / (2m)."""
    return 1.0 / np.asarray(n_eff, dtype=float) + np.square(g) / (2.0 * np.asarray(m, dtype=float))


def _require_m_above_4(m):
    if np.any(np.asarray(m) <= 4):
        raise DomainError("variance of the squared SMD estimate needs m > 4")


def var_delta2_true(delta2, m, n_eff):
    """Sampling variance of the unbiased delta^2 estimate at true delta^2."""
    _require_m_above_4(m)
    m = np.asarray(m, dtype=float)
    n_eff = np.asarray(n_eff, dtype=float)
    delta2 = np.asarray(delta2, dtype=float)
    out = 2.0 / (m - 4.0) * ((m - 1.0) / n_eff**2 + 2.0 * (m - 1.0) * delta2 / n_eff + delta2**2)
    return out[()] if out.ndim == 0 else out


def delta4_unbiased(d, m, n_eff):
    """Unbiased estimate of delta^4 from Cohen's d."""
    _require_m_above_4(m)
    m = np.asarray(m, dtype=float)
    n_eff = np.asarray(n_eff, dtype=float)
    d2 = np.square(np.asarray(d, dtype=float))
    out = (m - 2.0) * (m - 4.0) / m**2 * d2**2 - 6.0 / n_eff * (m - 2.0) / m * d2 + 3.0 / n_eff**2
    return out[()] if out.ndim == 0 else out


def var_delta2_hat(d, m, n_eff):
    """Unbiased estimate of the variance of the delta^2 estimate (may be negative)."""
    _require_m_above_4(m)
    m = np.asarray(m, dtype=float)
    n_eff = np.asarray(n_eff, dtype=float)
    d2 = np.square(np.asarray(d, dtype=float))
    out = 2.0 * (m - 2.0) / m**2 * d2**2 + 4.0 * (m - 2.0) / (m * n_eff) * d2 - 2.0 / n_eff**2
    return out[()] if out.ndim == 0 else out


def _delta2_hat(d, m, n_eff):
    m = np.asarray(m, dtype=float)
    return (m - 2.0) / m * np.square(d) - 1.0 / np.asarray(n_eff, dtype=float)


# ---------------------------------------------------------------------------
# records


def effect_from_d(d: float, n_t: int, n_c: int, study_id: Optional[str] = None) -> EffectRecord:
    n_t = _check_df(n_t, "n_t", minimum=2)
    n_c = _check_df(n_c, "n_c", minimum=2)
    d = float(d)
    n = n_t + n_c
    m = n - 2
    n_eff = n_t * n_c / n
    g = hedges_j(m) * d
    if m > 4:
        v2 = float(var_delta2_hat(d, m, n_eff))
    else:
        logger.warning("study %s has m=%d <= 4; variance of the delta^2 estimate is undefined", study_id, m)
        v2 = None
    return EffectRecord(
        d=d,
        g=g,
        m=m,
        n_eff=n_eff,
        delta2_hat=float(_delta2_hat(d, m, n_eff)),
        var_delta2_hat=v2,
        var_g=float(var_g_estimate(g, m, n_eff)),
        n_t=n_t,
        n_c=n_c,
        study_id=study_id,
    )


def derive_effect(study: StudySummary) -> EffectRecord:
    if study.is_raw:
        d = (study.mean_t - study.mean_c) / study.pooled_sd
    else:
        d = study.d
    return effect_from_d(d, study.n_t, study.n_c, study.study_id)


@dataclass(frozen=True)
class EffectSet:
    """Column-wise batch of per-study effects."""

    d: np.ndarray
    g: np.ndarray
    m: np.ndarray
    n_eff: np.ndarray
    var_g: np.ndarray

    @classmethod
    def from_d(cls, d, n_t, n_c) -> "EffectSet":
        d = np.asarray(d, dtype=float)
        n_t = np.broadcast_to(np.asarray(n_t), d.shape)
        n_c = np.broadcast_to(np.asarray(n_c), d.shape)
        if np.any(n_t < 2) or np.any(n_c < 2):
            raise DomainError("arm sizes must be >= 2")
        n = n_t + n_c
        m = (n - 2).astype(np.int64)
        n_eff = n_t * n_c / n
        g = _hedges_j_array(m) * d
        return cls(d=d, g=g, m=m, n_eff=n_eff.astype(float), var_g=var_g_estimate(g, m, n_eff))

    @classmethod
    def from_records(cls, records: Sequence[EffectRecord]) -> "EffectSet":
        return cls(
            d=np.array([r.d for r in records], dtype=float),
            g=np.array([r.g for r in records], dtype=float),
            m=np.array([r.m for r in records], dtype=np.int64),
            n_eff=np.array([r.n_eff for r in records], dtype=float),
            var_g=np.array([r.var_g for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.d)

    @property
    def k(self) -> int:
        return len(self.d)

    @property
    def delta2_hat(self) -> np.ndarray:
        return _delta2_hat(self.d, self.m, self.n_eff)

    def subset(self, mask) -> "EffectSet":
        return EffectSet(self.d[mask], self.g[mask], self.m[mask], self.n_eff[mask], self.var_g[mask])

    def with_var_g(self, var_g) -> "EffectSet":
        return EffectSet(self.d, self.g, self.m, self.n_eff, np.asarray(var_g, dtype=float))

    def __iter__(self) -> Iterator[EffectRecord]:
        for i in range(len(self.d)):
            m = int(self.m[i])
            yield EffectRecord(
                d=float(self.d[i]),
                g=float(self.g[i]),
                m=m,
                n_eff=float(self.n_eff[i]),
                delta2_hat=float(self.delta2_hat[i]),
                var_delta2_hat=float(var_delta2_hat(self.d[i], m, self.n_eff[i])) if m > 4 else None,
                var_g=float(self.var_g[i]),
            )


EffectsLike = Union[EffectSet, Iterable[EffectRecord]]


def as_effect_set(effects: EffectsLike) -> EffectSet:
    if isinstance(effects, EffectSet):
        return effects
    return EffectSet.from_records(list(effects))


# ---------------------------------------------------------------------------
# single-study profile interval


def steiger_ci(d: float, m: int, n_eff: float, alpha: float = 0.05):
    """F-profile interval for delta^2 (and |delta|) from a single study.

    Inverts the noncentral F_{1,m} law of n_eff * d^2 in its noncentrality;
    a limit is set to zero when the observed statistic is too small for a
    positive solution.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    m = _check_df(m, "m")
    x = n_eff * d * d
    level = 1.0 - alpha
    cdf0 = _ncf_cdf(x, 1, m, 0.0)
    lam_upper = 0.0 if cdf0 < alpha / 2 else solve_ncp(x, 1, m, alpha / 2)
    lam_lower = 0.0 if cdf0 < 1.0 - alpha / 2 else solve_ncp(x, 1, m, 1.0 - alpha / 2)
    sq = IntervalEstimate(lam_lower / n_eff, lam_upper / n_eff, level, "F-profile")
    return sq, sq.sqrt("F-profile")
