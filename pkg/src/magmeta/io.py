"""Study ingestion, results persistence, reports and plots."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence
from xml.sax.saxutils import escape

from . import __version__
from .dists import DomainError
from .effects import StudySummary
from .simulation import PROCEDURES, ScenarioConfig, ScenarioResult, SummaryRow
from .pooling import TAU2_METHODS

__all__ = [
    "DataError",
    "RunManifest",
    "RAW_COLUMNS",
    "D_COLUMNS",
    "RESULT_COLUMNS",
    "read_studies_csv",
    "write_results_csv",
    "read_results_csv",
    "load_config",
    "render_report",
    "render_svg",
    "write_manifest",
]

RAW_COLUMNS = ("study_id", "n_t", "n_c", "mean_t", "mean_c", "sd_t", "sd_c")
D_COLUMNS = ("study_id", "n_t", "n_c", "d")
RESULT_COLUMNS = ("scenario_id", "k", "n_pattern", "f", "delta", "tau2", "method", "metric", "value", "mc_se", "reps")


class DataError(Exception):
    """Malformed or unusable input data."""


def fmt(x) -> str:
    """Lossless text form of a number (17 significant digits for floats)."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


# ---------------------------------------------------------------------------
# studies


def _parse(value: str, kind, row: int, column: str):
    try:
        out = kind(value.strip())
    except (ValueError, AttributeError):
        raise DataError(f"row {row}, column {column}: cannot parse {value!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(out):
        raise DataError(f"row {row}, column {column}: value must be finite")
    return out


def read_studies_csv(path) -> list[StudySummary]:
    """Read studies in raw (means/SDs) or d form; the header decides which."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = tuple(c.strip() for c in (reader.fieldnames or ()))
        if not header:
            raise DataError("no studies")
        cols = set(header)
        if cols == set(RAW_COLUMNS):
            raw = True
        elif cols == set(D_COLUMNS):
            raw = False
        elif "d" in cols and cols & {"mean_t", "mean_c", "sd_t", "sd_c"}:
            raise DataError("header mixes the raw and d forms")
        else:
            raise DataError(f"unrecognised header {','.join(header)}; expected {','.join(RAW_COLUMNS)} or {','.join(D_COLUMNS)}")
        studies = []
        for lineno, rec in enumerate(reader, start=2):
            rec = {k.strip(): v for k, v in rec.items() if k is not None}
            if None in rec.values() or any(v is None for v in rec.values()):
                raise DataError(f"row {lineno}: wrong number of fields")
            n_t = _parse(rec["n_t"], int, lineno, "n_t")
            n_c = _parse(rec["n_c"], int, lineno, "n_c")
            if n_t + n_c < 4:
                raise DataError(f"row {lineno}, column n_t/n_c: total sample size {n_t + n_c} < 4")
            for col, n in (("n_t", n_t), ("n_c", n_c)):
                if n < 2:
                    raise DataError(f"row {lineno}, column {col}: each arm needs at least 2 subjects")
            sid = rec["study_id"].strip()
            try:
                if raw:
                    vals = {c: _parse(rec[c], float, lineno, c) for c in ("mean_t", "mean_c", "sd_t", "sd_c")}
                    for c in ("sd_t", "sd_c"):
                        if vals[c] <= 0:
                            raise DataError(f"row {lineno}, column {c}: standard deviation must be positive")
                    studies.append(StudySummary(n_t=n_t, n_c=n_c, study_id=sid, **vals))
                else:
                    d = _parse(rec["d"], float, lineno, "d")
                    studies.append(StudySummary(n_t=n_t, n_c=n_c, d=d, study_id=sid))
            except DomainError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
    if not studies:
        raise DataError("no studies")
    return studies


# ---------------------------------------------------------------------------
# results


def write_results_csv(rows: Iterable[SummaryRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_results_csv(path) -> list[SummaryRow]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != RESULT_COLUMNS:
            raise DataError(f"{path}: not a results file")
        for rec in reader:
            sid, k, pattern, f, delta, tau2, method, metric, value, se, reps = rec
            out.append(
                SummaryRow(int(sid), int(k), pattern, float(f), float(delta), float(tau2), method, metric, float(value), float(se), int(reps))
            )
    return out


# ---------------------------------------------------------------------------
# configuration

_CONFIG_KEYS = {"grid", "design", "scenarios", "reps", "seed", "methods", "procedures", "bootstrap_b", "alpha", "workers"}
_DESIGN_KEYS = {"k", "sizes", "delta", "tau2", "f"}
_SCENARIO_KEYS = {"k", "sizes", "delta", "tau2", "f"}


def _reject_unknown(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise DataError(f"{where}: unknown keys {sorted(unknown)}")


def load_config(path) -> tuple[list[ScenarioConfig], dict]:
    """Scenarios and run options from a JSON config file.

    Top-level keys: ``grid`` ("default" or "reduced"), ``design`` (lists
    crossed into a grid), ``scenarios`` (explicit cells), plus ``reps``,
    ``seed``, ``methods``, ``procedures``, ``bootstrap_b``, ``alpha`` and
    ``workers``.  Unknown keys are errors.
    """
    from .simulation import default_grid, reduced_grid

    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError("config must be a JSON object")
    _reject_unknown(cfg, _CONFIG_KEYS, "config")
    common = {key: cfg[key] for key in ("reps", "seed", "bootstrap_b", "alpha") if key in cfg}
    if "methods" in cfg:
        common["methods"] = tuple(cfg["methods"])
    if "procedures" in cfg:
        common["procedures"] = tuple(cfg["procedures"])
    cells: list[dict] = []
    try:
        if "grid" in cfg:
            grid = {"default": default_grid, "reduced": reduced_grid}.get(cfg["grid"])
            if grid is None:
                raise DataError(f"unknown grid {cfg['grid']!r}")
            cells += [
                dict(k=c.k, sizes=c.sizes, delta=c.delta, tau2=c.tau2, f=c.f) for c in grid()
            ]
        if "design" in cfg:
            design = cfg["design"]
            _reject_unknown(design, _DESIGN_KEYS, "design")
            missing = {"k", "sizes", "delta", "tau2"} - set(design)
            if missing:
                raise DataError(f"design: missing keys {sorted(missing)}")
            f = design.get("f", 0.5)
            for k in design["k"]:
                for sizes in design["sizes"]:
                    sizes = [sizes] if isinstance(sizes, int) else sizes
                    for delta in design["delta"]:
                        for tau2 in design["tau2"]:
                            cells.append(dict(k=k, sizes=tuple(sizes), delta=delta, tau2=tau2, f=f))
        for i, sc in enumerate(cfg.get("scenarios", [])):
            _reject_unknown(sc, _SCENARIO_KEYS, f"scenarios[{i}]")
            sizes = sc["sizes"]
            sizes = (sizes,) if isinstance(sizes, int) else tuple(sizes)
            cells.append(dict(k=sc["k"], sizes=sizes, delta=sc["delta"], tau2=sc["tau2"], f=sc.get("f", 0.5)))
        if not cells:
            raise DataError("config defines no scenarios")
        configs = [ScenarioConfig(scenario_id=i, **cell, **common) for i, cell in enumerate(cells)]
    except (DomainError, KeyError, TypeError) as exc:
        raise DataError(f"invalid config: {exc}") from None
    return configs, {"workers": cfg.get("workers")}


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: Optional[str] = None
    input_path: Optional[str] = None
    output_paths: list = field(default_factory=list)
    seed: Optional[int] = None
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    tool_version: str = __version__
    python: str = field(default_factory=platform.python_version)


def write_manifest(manifest: RunManifest, path) -> None:
    Path(path).write_text(json.dumps(asdict(manifest), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# reports


def render_report(results: Sequence[ScenarioResult]) -> str:
    """Markdown report with one section per method."""
    by_method: dict = {}
    for res in results:
        for (method, metric), (value, se, n) in res.metrics.items():
            by_method.setdefault(method, []).append((res.config, metric, value, se, n))
    lines = ["# Simulation report", ""]
    n_fail = sum(sum(r.failures.values()) for r in results)
    lines += [f"Scenarios: {len(results)}; numerical failures: {n_fail}", ""]
    for method in sorted(by_method):
        lines += [f"## {method}", "", "| scenario | K | n | delta | tau2 | metric | value | MC SE | reps |", "|---|---|---|---|---|---|---|---|---|"]
        for c, metric, value, se, n in sorted(by_method[method], key=lambda r: (r[0].scenario_id, r[1])):
            lines.append(f"| {c.scenario_id} | {c.k} | {c.n_pattern} | {c.delta:g} | {c.tau2:g} | {metric} | {value:.4f} | {se:.4f} | {n} |")
        lines.append("")
    return "\n".join(lines)


_PANEL_W, _PANEL_H, _PAD = 260, 180, 36
_COLOURS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666", "#1f78b4", "#b2df8a")


def render_svg(rows: Sequence[SummaryRow], metric: str, delta: Optional[float] = None) -> str:
    """Panels of ``metric`` against tau2, one panel per (n, K), one polyline per method."""
    rows = [r for r in rows if r.metric == metric]
    if delta is None and rows:
        delta = min(r.delta for r in rows)
    rows = [r for r in rows if r.delta == delta]
    panels = sorted({(r.n_pattern, r.k) for r in rows}, key=lambda p: (len(p[0]), p[0], p[1]))
    methods = sorted({r.method for r in rows})
    values = [r.value for r in rows] or [0.0, 1.0]
    vmin, vmax = min(values), max(values)
    if vmax - vmin < 1e-12:
        vmin, vmax = vmin - 0.5, vmax + 0.5
    ncol = max(1, min(3, len(panels)))
    nrow = max(1, math.ceil(len(panels) / ncol))
    width = ncol * _PANEL_W + 160
    height = nrow * _PANEL_H + 40
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
        f'<text x="8" y="16" font-size="12">{escape(metric)} vs tau2, delta = {delta}</text>',
    ]
    for idx, (pattern, k) in enumerate(panels):
        x0 = (idx % ncol) * _PANEL_W
        y0 = 24 + (idx // ncol) * _PANEL_H
        iw, ih = _PANEL_W - 2 * _PAD, _PANEL_H - 2 * _PAD
        out.append(f'<g transform="translate({x0},{y0})">')
        out.append(f'<rect x="{_PAD}" y="{_PAD}" width="{iw}" height="{ih}" fill="none" stroke="#999"/>')
        out.append(f'<text x="{_PAD}" y="{_PAD - 6}">n={escape(pattern)}, K={k}</text>')
        cell = [r for r in rows if r.n_pattern == pattern and r.k == k]
        for mi, method in enumerate(methods):
            pts = sorted((r.tau2, r.value) for r in cell if r.method == method)
            if not pts:
                continue
            coords = " ".join(
                f"{_PAD + iw * t:.2f},{_PAD + ih * (1 - (v - vmin) / (vmax - vmin)):.2f}" for t, v in pts
            )
            colour = _COLOURS[mi % len(_COLOURS)]
            out.append(f'<polyline data-method="{escape(method)}" fill="none" stroke="{colour}" points="{coords}"/>')
        out.append("</g>")
    for mi, method in enumerate(methods):
        y = 40 + 14 * mi
        colour = _COLOURS[mi % len(_COLOURS)]
        out.append(f'<text x="{ncol * _PANEL_W + 10}" y="{y}" fill="{colour}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def known_tags() -> dict:
    return {"methods": TAU2_METHODS, "procedures": PROCEDURES}
