"""Fast oracle checks runnable from an installed package (``magmeta selftest``)."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats

from . import dists
from .effects import EffectRecord, effect_from_d, steiger_ci
from .magnitude import extra_coverage_same_sign, naive_ci_delta2, solve_beta, bootstrap_sum_f
from .effects import IntervalEstimate
from .pooling import tau2_mp, tau2_ssc


def _record(g, var_g, n_eff=25.0, m=98):
    return EffectRecord(d=g, g=g, m=m, n_eff=n_eff, delta2_hat=0.0, var_delta2_hat=None, var_g=var_g)


def _checks():
    c975 = float(dists.normal_quantile(0.975))
    yield "normal quantile 0.975", abs(c975 - 1.959963984540054) < 1e-12
    yield "central F reduction", abs(
        dists.noncentral_f_cdf(2.5, dists.NoncentralFParams(1, 30, 0.0)) - stats.f.cdf(2.5, 1, 30)
    ) < 1e-12
    yield "noncentral F vs series-free integral", abs(
        dists.noncentral_f_cdf(5.0, dists.NoncentralFParams(1, 98, 4.0))
        - integrate.quad(lambda w: stats.chi2.pdf(w, 98) * (stats.norm.cdf(math.sqrt(5 * w / 98) - 2) - stats.norm.cdf(-math.sqrt(5 * w / 98) - 2)), 0, np.inf, epsabs=1e-13)[0]
    ) < 1e-9
    lam = dists.solve_ncp(3.0, 1, 38, 0.025)
    yield "solve_ncp residual", abs(dists.noncentral_f_cdf(3.0, dists.NoncentralFParams(1, 38, lam)) - 0.025) < 1e-9
    anchors = [(1.0, 0.025), (1.5, 4.43e-05), (2.0, 2.052e-09)]
    yield "extra-coverage anchors", all(
        abs(extra_coverage_same_sign(s * c975) / v - 1) < 0.02 for s, v in anchors
    )
    yield "Hedges J approximation", abs(dists.hedges_j(20) - dists.hedges_j_approx(20)) < 1e-3
    mp = tau2_mp([_record(0.0, 1.0), _record(3.0, 1.0)])
    yield "Mandel-Paule hand case", abs(mp.value - 3.5) < 1e-9
    ssc = tau2_ssc([_record(0.0, 0.1, n_eff=10.0), _record(1.0, 0.1, n_eff=10.0)])
    yield "SSC hand case", abs(ssc.value - 0.4) < 1e-12
    sq, _ = steiger_ci(0.0, 38, 10.0)
    yield "profile interval at d = 0", sq.lower == 0.0 and sq.upper == 0.0
    nv = naive_ci_delta2(IntervalEstimate(-0.3, 0.5, 0.95, "x"))
    yield "naive straddling interval", nv.lower == 0.0 and abs(nv.upper - 0.25) < 1e-15
    beta = solve_beta(0.7, 0.05)
    yield "beta equation residual", abs(dists.normal_quantile(1 - beta) + dists.normal_quantile(0.05 - beta) - 1.4) < 1e-8
    rec = effect_from_d(0.5, 50, 50)
    yield "d-form arithmetic", rec.m == 98 and rec.n_eff == 25.0
    null = bootstrap_sum_f(np.array([98, 98]), 20_000, np.random.default_rng(1))
    yield "bootstrap mean", abs(null.mean() - 2 * 98 / 96) < 0.05


def run_selftest(stream=None) -> bool:
    ok = True
    for name, passed in _checks():
        ok &= bool(passed)
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        if stream is not None:
            print(line, file=stream)
    return ok
