"""Command-line entry point: ``magmeta {simulate,analyze,ci,selftest}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 self-test failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dists import DomainError
from .effects import EffectSet, derive_effect, effect_from_d, steiger_ci
from .io import (
    DataError,
    RunManifest,
    load_config,
    read_studies_csv,
    render_report,
    render_svg,
    write_manifest,
    write_results_csv,
)
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
from .simulation import PROCEDURES, default_grid, reduced_grid, run_scenarios, summarize

log = logging.getLogger("magmeta")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="magmeta", description="Meta-analysis of squared and absolute standardized mean differences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="run the Monte Carlo scenario grid")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--grid", choices=("default", "reduced"), default=None)
    src.add_argument("--config", type=Path, help="JSON config file")
    s.add_argument("--reps", type=int, default=None, help="replications per scenario (default 2000)")
    s.add_argument("--full", action="store_true", help="10,000 replications per scenario")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--workers", type=int, default=None, help="worker processes (default $MAGMETA_WORKERS or 1)")
    s.add_argument("--bootstrap-b", type=int, default=None)
    s.add_argument("--procedures", nargs="+", choices=PROCEDURES, default=None)
    s.add_argument("--methods", nargs="+", choices=TAU2_METHODS, default=None)
    s.add_argument("--out", type=Path, required=True, help="results CSV")
    s.add_argument("--report", type=Path, help="markdown report")
    s.add_argument("--svg", type=Path, help="SVG panels of a metric vs tau2")
    s.add_argument("--svg-metric", default="coverage")
    s.add_argument("--svg-delta", type=float, default=None)

    a = sub.add_parser("analyze", help="magnitude meta-analysis of a studies CSV")
    a.add_argument("--input", type=Path, required=True)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--bootstrap-b", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", type=Path, help="write the report here instead of stdout")

    c = sub.add_parser("ci", help="single-study F-profile interval for delta^2 and |delta|")
    c.add_argument("--d", type=float, required=True)
    c.add_argument("--nt", type=int, required=True)
    c.add_argument("--nc", type=int, required=True)
    c.add_argument("--alpha", type=float, default=0.05)

    sub.add_parser("selftest", help="run fast oracle checks")
    return p


# ---------------------------------------------------------------------------
# analyze


def analyze_studies(studies, alpha: float = 0.05, bootstrap_b: int = 10_000, seed: int = 0) -> dict:
    """All magnitude analyses for a list of StudySummary; the data behind the report."""
    records = [derive_effect(s) for s in studies]
    es = EffectSet.from_records(records)
    null = bootstrap_sum_f(es.m, bootstrap_b, np.random.default_rng(seed))
    out = {
        "records": records,
        "alpha": alpha,
        "common_effect": {
            "delta2": ce_delta2(es),
            "test_chi2": ce_test(es, CHI2),
            "test_bootstrap": ce_test(es, BOOTSTRAP, null=null),
            "profile_ci": ce_profile_ci(es, alpha),
        },
        "methods": {},
    }
    for method in TAU2_METHODS:
        tau2 = estimate_tau2(es, method)
        pooled, signed = pool_delta(es, tau2, "normal", alpha)
        entry = {
            "tau2": tau2,
            "pooled": pooled,
            "signed_ci": signed,
            "point": rem_point_estimate(es, tau2),
            "naive_ci": naive_ci_delta2(signed),
            "corrected_ci": corrected_ci_delta2(pooled, alpha, "normal"),
            "conditional_ci": conditional_profile_ci(es, tau2, alpha),
            "conditional_test_chi2": conditional_test(es, tau2, CHI2),
            "conditional_test_bootstrap": conditional_test(es, tau2, BOOTSTRAP, null=null),
        }
        if method == "SSC":
            pooled_t, signed_t = pool_delta(es, tau2, "t", alpha)
            entry["signed_ci_t"] = signed_t
            entry["naive_ci_t"] = naive_ci_delta2(signed_t)
            entry["corrected_ci_t"] = corrected_ci_delta2(pooled_t, alpha, "t")
        out["methods"][method] = entry
    return out


def _iv(ci) -> str:
    return f"[{ci.lower:.6g}, {ci.upper:.6g}]"


def render_analysis(res: dict) -> str:
    pct = f"{100 * (1 - res['alpha']):g}%"
    lines = ["# Magnitude meta-analysis", "", f"Studies: {len(res['records'])}", ""]
    lines += ["| study | d | g | m | n_eff | delta2_hat | var(delta2_hat) |", "|---|---|---|---|---|---|---|"]
    for r in res["records"]:
        v = "n/a" if r.var_delta2_hat is None else f"{r.var_delta2_hat:.6g}"
        lines.append(f"| {r.study_id} | {r.d:.6g} | {r.g:.6g} | {r.m} | {r.n_eff:.6g} | {r.delta2_hat:.6g} | {v} |")
    ce = res["common_effect"]
    lines += [
        "",
        "## Common-effect model",
        "",
        f"- delta2 estimate: {ce['delta2']:.6g}",
        f"- test of delta2 = 0: statistic {ce['test_chi2'].statistic:.6g}, "
        f"p (chi2_K) = {ce['test_chi2'].p_value:.4g}, p (bootstrap) = {ce['test_bootstrap'].p_value:.4g}",
        f"- {pct} chi2-profile interval for delta2: {_iv(ce['profile_ci'])}; for |delta|: {_iv(ce['profile_ci'].sqrt())}",
    ]
    for method, e in res["methods"].items():
        lines += [
            "",
            f"## {method}",
            "",
            f"- tau2: {e['tau2'].value:.6g}" + (" (truncated at 0)" if e["tau2"].truncated else ""),
            f"- pooled delta: {e['pooled'].estimate:.6g} (SE {e['pooled'].std_err:.6g}), {pct} CI {_iv(e['signed_ci'])}",
            f"- delta2 estimate (delta2_hat - tau2): {e['point'].delta2:.6g}; truncated: {e['point'].delta2_truncated:.6g}",
            f"- naive {pct} interval for delta2 ({method}): {_iv(e['naive_ci'])}",
            f"- corrected {pct} interval for delta2 ({method}*): {_iv(e['corrected_ci'])}",
        ]
        if "naive_ci_t" in e:
            lines += [
                f"- naive {pct} interval for delta2 (SSC_t): {_iv(e['naive_ci_t'])}; for |delta|: {_iv(e['naive_ci_t'].sqrt())}",
                f"- corrected {pct} interval for delta2 (SSC*_t): {_iv(e['corrected_ci_t'])}",
            ]
        lines += [
            f"- conditional {pct} interval for delta2 ({method}_c): {_iv(e['conditional_ci'])}",
            f"- conditional test of delta2 = 0: Lambda = {e['conditional_test_chi2'].statistic:.6g}, "
            f"p (chi2_K) = {e['conditional_test_chi2'].p_value:.4g}, p (bootstrap) = {e['conditional_test_bootstrap'].p_value:.4g}",
        ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args, argv) -> int:
    opts = {}
    for key in ("seed", "bootstrap_b"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    if args.full:
        opts["reps"] = 10_000
    elif args.reps is not None:
        opts["reps"] = args.reps
    if args.procedures:
        opts["procedures"] = tuple(args.procedures)
    if args.methods:
        opts["methods"] = tuple(args.methods)
    workers = args.workers
    if args.config is not None:
        configs, extra = load_config(args.config)
        if opts:
            configs = [c.__class__(**{**c.__dict__, **opts}) for c in configs]
        if workers is None:
            workers = extra.get("workers")
    else:
        grid = reduced_grid if args.grid == "reduced" else default_grid
        try:
            configs = grid(**opts)
        except DomainError as exc:
            raise DataError(str(exc)) from None
    log.info("running %d scenarios", len(configs))
    results = run_scenarios(configs, workers=workers)
    rows = summarize(results)
    write_results_csv(rows, args.out)
    outputs = [str(args.out)]
    if args.report:
        args.report.write_text(render_report(results), encoding="utf-8")
        outputs.append(str(args.report))
    if args.svg:
        args.svg.write_text(render_svg(rows, args.svg_metric, args.svg_delta), encoding="utf-8")
        outputs.append(str(args.svg))
    seed = configs[0].seed if configs else None
    manifest = RunManifest(
        command="simulate",
        argv=list(argv),
        config_path=str(args.config) if args.config else None,
        output_paths=outputs,
        seed=seed,
    )
    write_manifest(manifest, str(args.out) + ".manifest.json")
    n_fail = sum(sum(r.failures.values()) for r in results)
    print(f"wrote {len(rows)} rows for {len(results)} scenarios to {args.out} ({n_fail} numerical failures)")
    return EXIT_OK


def _cmd_analyze(args, argv) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    studies = read_studies_csv(args.input)
    if len(studies) < 2:
        raise DataError("analysis needs at least two studies")
    try:
        res = analyze_studies(studies, args.alpha, args.bootstrap_b, args.seed)
    except (DomainError, ArithmeticError) as exc:
        raise DataError(str(exc)) from None
    text = render_analysis(res)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        write_manifest(
            RunManifest(command="analyze", argv=list(argv), input_path=str(args.input), output_paths=[str(args.out)], seed=args.seed),
            str(args.out) + ".manifest.json",
        )
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_ci(args, argv) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    try:
        rec = effect_from_d(args.d, args.nt, args.nc)
    except DomainError as exc:
        raise DataError(str(exc)) from None
    sq, ab = steiger_ci(rec.d, rec.m, rec.n_eff, args.alpha)
    pct = f"{100 * (1 - args.alpha):g}%"
    print(f"d = {rec.d:g}, m = {rec.m}, n_eff = {rec.n_eff:g}, delta2_hat = {rec.delta2_hat:.6g}")
    print(f"{pct} F-profile interval for delta^2: [{sq.lower:.6g}, {sq.upper:.6g}]")
    print(f"{pct} F-profile interval for |delta|: [{ab.lower:.6g}, {ab.upper:.6g}]")
    return EXIT_OK


def _cmd_selftest(args, argv) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(sys.stdout) else EXIT_SELFTEST


_COMMANDS = {"simulate": _cmd_simulate, "analyze": _cmd_analyze, "ci": _cmd_ci, "selftest": _cmd_selftest}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"magmeta: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"magmeta: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"magmeta: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
