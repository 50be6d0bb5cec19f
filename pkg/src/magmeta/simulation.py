"""Monte Carlo engine for scenario grids of random-effects SMD meta-analyses.

Each replication draws delta_i ~ N(delta, tau2) and d_i from the scaled
noncentral t law, then runs every enabled estimator, interval and test.

Randomness is keyed, not sequential: replication ``r`` of scenario ``s``
draws from ``SeedSequence(seed, spawn_key=(s, 0, r))`` and the scenario's
bootstrap null from ``spawn_key=(s, 1)``.  Per-replication values are stored
by index and reduced in index order, so results are bit-identical whatever
the number of workers or the order in which chunks finish.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .dists import DomainError, sample_scaled_noncentral_t
from .effects import EffectSet
from .magnitude import (
    BOOTSTRAP,
    CHI2,
    bootstrap_sum_f,
    ce_delta2,
    ce_profile_ci,
    ce_test,
    conditional_profile_ci,
    conditional_test,
    corrected_ci_delta2,
    naive_ci_delta2,
    rem_point_estimate,
)
from .pooling import TAU2_METHODS, estimate_tau2, pool_delta

logger = logging.getLogger(__name__)

__all__ = [
    "PROCEDURES",
    "ScenarioConfig",
    "ScenarioResult",
    "SummaryRow",
    "default_grid",
    "reduced_grid",
    "draw_true_effects",
    "generate_meta_sample",
    "replication_rng",
    "run_scenario",
    "run_scenarios",
    "summarize",
    "mc_se_proportion",
]

PROCEDURES = (
    "pooled",  # bias of the pooled signed SMD
    "point",  # bias of delta2_hat - tau2_hat, plain and truncated
    "naive_ci",
    "corrected_ci",
    "conditional_test",  # Lambda(tau2_hat) against chi2_K
    "bootstrap_test",  # Lambda(tau2_hat) against bootstrapped sum of F
    "unconditional_test",  # Lambda(true tau2)
    "conditional_ci",
    "common_effect",  # only evaluated in tau2 = 0 cells
)

EQUAL_SIZES = (40, 100, 250, 500)
EQUAL_K = (5, 10, 20, 30, 50, 100)
UNEQUAL_PATTERNS = {
    60: (24, 32, 36, 40, 168),
    100: (64, 72, 76, 80, 208),
    160: (124, 132, 136, 140, 268),
}
UNEQUAL_K = (5, 10, 30)
DELTAS = (0.0, 0.2, 0.5, 1.0, 2.0)
TAU2S = tuple(round(0.1 * i, 1) for i in range(11))

WORKERS_ENV = "MAGMETA_WORKERS"


@dataclass(frozen=True)
class ScenarioConfig:
    k: int
    sizes: tuple
    delta: float
    tau2: float
    f: float = 0.5
    reps: int = 2000
    seed: int = 0
    methods: tuple = TAU2_METHODS
    procedures: tuple = PROCEDURES
    bootstrap_b: int = 10_000
    alpha: float = 0.05
    scenario_id: int = 0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) != self.k:
            if len(sizes) and self.k % len(sizes) == 0:
                sizes = sizes * (self.k // len(sizes))
            else:
                raise DomainError(f"{len(sizes)} study sizes do not fit K={self.k}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "procedures", tuple(self.procedures))
        if self.k < 2:
            raise DomainError("K must be >= 2")
        if not 0.0 < self.f < 1.0:
            raise DomainError("f must lie in (0, 1)")
        if self.tau2 < 0.0:
            raise DomainError("tau2 must be >= 0")
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        unknown = set(self.methods) - set(TAU2_METHODS)
        if unknown:
            raise DomainError(f"unknown tau2 methods {sorted(unknown)}")
        unknown = set(self.procedures) - set(PROCEDURES)
        if unknown:
            raise DomainError(f"unknown procedures {sorted(unknown)}")
        if any(n < 6 for n in sizes):
            raise DomainError("study sizes must be >= 6 so that m > 4")
        n_c, n_t = self.arm_sizes
        if np.any(n_c < 2) or np.any(n_t < 2):
            raise DomainError("each arm needs at least two subjects")

    @property
    def arm_sizes(self):
        """(n_C, n_T) with n_C = floor(f n), so n_T = ceil(n/2) when f = 1/2."""
        n = np.asarray(self.sizes, dtype=np.int64)
        n_c = np.floor(self.f * n + 1e-9).astype(np.int64)
        return n_c, n - n_c

    @property
    def n_pattern(self) -> str:
        if len(set(self.sizes)) == 1:
            return str(self.sizes[0])
        return "nbar=" + format(sum(self.sizes) / len(self.sizes), "g")

    @property
    def delta2(self) -> float:
        return self.delta * self.delta

    def enabled(self, procedure: str) -> bool:
        return procedure in self.procedures


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: dict  # (method, metric) -> (value, mc_se, n_used)
    failures: dict  # family -> count
    reps: int
    elapsed: float = 0.0

    def value(self, method: str, metric: str) -> float:
        return self.metrics[(method, metric)][0]

    def mc_se(self, method: str, metric: str) -> float:
        return self.metrics[(method, metric)][1]


class SummaryRow(NamedTuple):
    scenario_id: int
    k: int
    n_pattern: str
    f: float
    delta: float
    tau2: float
    method: str
    metric: str
    value: float
    mc_se: float
    reps: int


# ---------------------------------------------------------------------------
# grids


def _cells(sizes_by_label, ks, deltas, tau2s, **kw):
    for k, sizes in sizes_by_label:
        for delta, tau2 in itertools.product(deltas, tau2s):
            yield dict(k=k, sizes=sizes, delta=delta, tau2=tau2, **kw)


def default_grid(reps: int = 2000, seed: int = 0, **kw) -> list[ScenarioConfig]:
    """All cells of the design: 1320 equal-size and 495 unequal-size scenarios."""
    shapes = [(k, (n,) * k) for k in EQUAL_K for n in EQUAL_SIZES]
    shapes += [(k, pattern) for pattern in UNEQUAL_PATTERNS.values() for k in UNEQUAL_K]
    cells = _cells(shapes, None, DELTAS, TAU2S, reps=reps, seed=seed, **kw)
    return [ScenarioConfig(scenario_id=i, **c) for i, c in enumerate(cells)]


def reduced_grid(reps: int = 100, seed: int = 0, **kw) -> list[ScenarioConfig]:
    """A 24-cell subset of the design for quick runs."""
    shapes = [(k, (n,) * k) for k in (5, 10) for n in (40, 100)]
    shapes += [(k, UNEQUAL_PATTERNS[60]) for k in (5, 10)]
    cells = _cells(shapes, None, (0.0, 0.5), (0.0, 0.4), reps=reps, seed=seed, **kw)
    return [ScenarioConfig(scenario_id=i, **c) for i, c in enumerate(cells)]


# ---------------------------------------------------------------------------
# data generation


def replication_rng(seed: int, scenario_id: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(scenario_id, 0, rep)))


def bootstrap_rng(seed: int, scenario_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(scenario_id, 1)))


def draw_true_effects(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Study-level SMDs delta_i ~ N(delta, tau2); exactly delta when tau2 = 0."""
    if config.tau2 > 0.0:
        return rng.normal(config.delta, math.sqrt(config.tau2), size=config.k)
    return np.full(config.k, float(config.delta))


def generate_meta_sample(config: ScenarioConfig, rng: np.random.Generator) -> EffectSet:
    n_c, n_t = config.arm_sizes
    n = n_c + n_t
    n_eff = n_t * n_c / n
    m = n - 2
    delta_i = draw_true_effects(config, rng)
    d = sample_scaled_noncentral_t(m, np.sqrt(n_eff) * delta_i, 1.0 / np.sqrt(n_eff), rng)
    return EffectSet.from_d(d, n_t, n_c)


# ---------------------------------------------------------------------------
# replications


_ERRORS = (ArithmeticError, ValueError, RuntimeError, FloatingPointError)


def _test_metric(config: ScenarioConfig) -> str:
    return "level" if config.delta == 0.0 else "power"


def _replicate(config: ScenarioConfig, rep: int, null) -> tuple[dict, dict]:
    """Run one replication; returns (values, failures).

    Values of a failed family are left out; the aggregator counts the gap.
    """
    rng = replication_rng(config.seed, config.scenario_id, rep)
    es = generate_meta_sample(config, rng)
    delta, delta2, alpha = config.delta, config.delta2, config.alpha
    test_metric = _test_metric(config)
    out: dict = {}
    failures: dict = {}

    def guarded(family, fn):
        try:
            fn()
        except _ERRORS as exc:
            failures[family] = failures.get(family, 0) + 1
            logger.debug("scenario %d rep %d: %s failed: %s", config.scenario_id, rep, family, exc)

    en = config.enabled
    need_pool = en("pooled") or en("naive_ci") or en("corrected_ci")

    for method in config.methods:

        def per_method(method=method):
            t = estimate_tau2(es, method)
            out[(method, "bias_tau2")] = t.value - config.tau2
            if need_pool:
                crits = ("normal", "t") if method == "SSC" else ("normal",)
                for crit in crits:
                    pooled, ci = pool_delta(es, t, crit, alpha)
                    if crit == "normal" and en("pooled"):
                        out[(method, "bias_delta")] = pooled.estimate - delta
                    if en("naive_ci"):
                        out[(pooled.method, "coverage")] = float(naive_ci_delta2(ci).contains(delta2))
                    if en("corrected_ci"):
                        cc = corrected_ci_delta2(pooled, alpha, crit)
                        out[(cc.method, "coverage")] = float(cc.contains(delta2))
            if en("point"):
                est = rem_point_estimate(es, t)
                out[(method, "bias_delta2")] = est.delta2 - delta2
                out[(method, "bias_delta2_tr")] = est.delta2_truncated - delta2
            if en("conditional_test"):
                res = conditional_test(es, t, CHI2)
                out[("Lambda_" + method, test_metric)] = float(res.reject_at_05)
            if en("bootstrap_test"):
                res = conditional_test(es, t, BOOTSTRAP, null=null)
                out[("Lambda_" + method + "_b", test_metric)] = float(res.reject_at_05)
            if en("conditional_ci"):
                ci = conditional_profile_ci(es, t, alpha)
                out[(method + "_c", "coverage")] = float(ci.contains(delta2))

        guarded(method, per_method)

    if en("unconditional_test"):

        def unconditional():
            res = conditional_test(es, config.tau2, CHI2)
            out[("tau2_known", test_metric)] = float(res.reject_at_05)
            if en("bootstrap_test"):
                res = conditional_test(es, config.tau2, BOOTSTRAP, null=null)
                out[("tau2_known_b", test_metric)] = float(res.reject_at_05)

        guarded("tau2_known", unconditional)

    if en("common_effect") and config.tau2 == 0.0:

        def common():
            out[("CE", "bias_delta2")] = ce_delta2(es) - delta2
            out[("CE", test_metric)] = float(ce_test(es, CHI2).reject_at_05)
            if en("bootstrap_test"):
                out[("CE_b", test_metric)] = float(ce_test(es, BOOTSTRAP, null=null).reject_at_05)
            out[("CE", "coverage")] = float(ce_profile_ci(es, alpha).contains(delta2))

        guarded("CE", common)

    return out, failures


def _scenario_null(config: ScenarioConfig):
    """Bootstrap null of sum F_{1,m_i}; depends only on the study dfs, so one per scenario."""
    if not config.enabled("bootstrap_test"):
        return None
    n_c, n_t = config.arm_sizes
    return bootstrap_sum_f(n_c + n_t - 2, config.bootstrap_b, bootstrap_rng(config.seed, config.scenario_id))


def _run_chunk(config: ScenarioConfig, start: int, stop: int):
    null = _scenario_null(config)
    return start, [_replicate(config, r, null) for r in range(start, stop)]


# ---------------------------------------------------------------------------
# aggregation


def mc_se_proportion(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n > 0 else float("nan")


def _aggregate(config: ScenarioConfig, per_rep: Sequence[tuple[dict, dict]], elapsed: float) -> ScenarioResult:
    keys = sorted({key for values, _ in per_rep for key in values})
    metrics = {}
    for method, metric in keys:
        x = np.array([v.get((method, metric), np.nan) for v, _ in per_rep])
        x = x[~np.isnan(x)]
        n = len(x)
        if metric in ("coverage", "level", "power"):
            p = float(x.mean())
            metrics[(method, metric)] = (p, mc_se_proportion(p, n), n)
        else:
            sd = float(x.std(ddof=1)) if n > 1 else float("nan")
            metrics[(method, metric)] = (float(x.mean()), sd / math.sqrt(n), n)
            if metric == "bias_delta":
                # asymptotic SE of a sample median under normality
                metrics[(method, "median_bias_delta")] = (
                    float(np.median(x)),
                    math.sqrt(math.pi / 2.0) * sd / math.sqrt(n),
                    n,
                )
    failures: dict = {}
    for _, fails in per_rep:
        for family, count in fails.items():
            failures[family] = failures.get(family, 0) + count
    return ScenarioResult(config, metrics, failures, len(per_rep), elapsed)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _chunks(reps: int, size: int):
    return [(s, min(s + size, reps)) for s in range(0, reps, size)]


def run_scenarios(
    configs: Iterable[ScenarioConfig], workers: Optional[int] = None, chunk_size: int = 250
) -> list[ScenarioResult]:
    """Run scenarios, splitting replications into chunks across worker processes."""
    configs = list(configs)
    workers = default_workers() if workers is None else max(1, int(workers))
    t0 = time.perf_counter()
    jobs = [(i, c, a, b) for i, c in enumerate(configs) for a, b in _chunks(c.reps, chunk_size)]
    collected: dict = {i: {} for i in range(len(configs))}
    if workers == 1:
        for i, c, a, b in jobs:
            start, rows = _run_chunk(c, a, b)
            collected[i][start] = rows
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(i, pool.submit(_run_chunk, c, a, b)) for i, c, a, b in jobs]
            for i, fut in futures:
                start, rows = fut.result()
                collected[i][start] = rows
    elapsed = time.perf_counter() - t0
    results = []
    for i, c in enumerate(configs):
        per_rep = [row for start in sorted(collected[i]) for row in collected[i][start]]
        results.append(_aggregate(c, per_rep, elapsed / max(len(configs), 1)))
    return results


def run_scenario(config: ScenarioConfig, workers: Optional[int] = None) -> ScenarioResult:
    t0 = time.perf_counter()
    result = run_scenarios([config], workers=workers)[0]
    result.elapsed = time.perf_counter() - t0
    return result


def summarize(results: Iterable[ScenarioResult]) -> list[SummaryRow]:
    """One row per (scenario, method, metric) plus a failure count per scenario."""
    rows = []
    for res in sorted(results, key=lambda r: r.config.scenario_id):
        c = res.config
        common = (c.scenario_id, c.k, c.n_pattern, c.f, c.delta, c.tau2)
        for (method, metric), (value, se, n) in sorted(res.metrics.items()):
            rows.append(SummaryRow(*common, method, metric, value, se, n))
        rows.append(SummaryRow(*common, "all", "failures", float(sum(res.failures.values())), 0.0, res.reps))
    return rows
