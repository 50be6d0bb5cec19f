"""Meta-analysis of magnitude effects built on standardized mean differences."""

__version__ = "0.1.0"

from .dists import DomainError
from .effects import EffectRecord, EffectSet, IntervalEstimate, StudySummary, derive_effect, effect_from_d, steiger_ci
from .magnitude import (
    MagnitudeEstimate,
    TestResult,
    ce_delta2,
    ce_profile_ci,
    ce_test,
    conditional_profile_ci,
    conditional_test,
    corrected_ci_delta2,
    naive_ci_delta2,
    rem_point_estimate,
)
from .pooling import PooledDelta, Tau2Estimate, pool_delta, tau2_kdb, tau2_mp, tau2_ssc

__all__ = [
    "DomainError",
    "EffectRecord",
    "EffectSet",
    "IntervalEstimate",
    "StudySummary",
    "derive_effect",
    "effect_from_d",
    "steiger_ci",
    "MagnitudeEstimate",
    "TestResult",
    "ce_delta2",
    "ce_profile_ci",
    "ce_test",
    "conditional_profile_ci",
    "conditional_test",
    "corrected_ci_delta2",
    "naive_ci_delta2",
    "rem_point_estimate",
    "PooledDelta",
    "Tau2Estimate",
    "pool_delta",
    "tau2_kdb",
    "tau2_mp",
    "tau2_ssc",
]
