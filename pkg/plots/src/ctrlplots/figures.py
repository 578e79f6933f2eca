"""The four figure renderers.

Every renderer reads artifact files, draws with a pinned style, and writes
a PNG whose bytes depend only on the input artifacts (fixed fonts, fixed
dpi, pinned metadata, no timestamps), so regenerating a figure from the
same inputs reproduces it byte for byte. Renderers plot logged quantities
only; the single display statistic they may form is a median over values
logged side by side in one artifact. Fitted slopes are never recomputed —
the regret figure annotates the slope found in summary.json.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from statistics import median

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import MissingColumn, SchemaMismatch  # noqa: E402
from .spec import FigureSpec  # noqa: E402

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.framealpha": 0.9,
    "figure.autolayout": False,
    "svg.hashsalt": "ctrlplots",
}
_DPI = 110
_METADATA = {"Software": "ctrlplots 0.1.0"}


@dataclass(frozen=True)
class PlotResult:
    """Where the figure landed and the exact annotation strings drawn."""

    output: Path
    annotations: tuple[str, ...]


def _read_rows(path: Path, required: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in required:
                if col not in header:
                    raise MissingColumn(
                        f"{path.name} lacks required column {col!r} "
                        f"(has {header})")
            rows = list(reader)
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MissingColumn(f"{path.name} has no data rows")
    return rows


def _read_json(path: Path) -> dict:
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path.name} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaMismatch(f"{path.name} root must be a JSON object")
    return raw


def _split_inputs(spec: FigureSpec) -> tuple[list[Path], list[Path]]:
    csvs = [p for p in spec.inputs if p.suffix.lower() == ".csv"]
    jsons = [p for p in spec.inputs if p.suffix.lower() == ".json"]
    if len(csvs) + len(jsons) != len(spec.inputs):
        raise SchemaMismatch("inputs must be .csv or .json files")
    return csvs, jsons


def _save(fig, spec: FigureSpec) -> None:
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, format="png", dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def _reference_line(ax, x0: float, y0: float, slope: float,
                    xs: list[float], loglog: bool) -> str:
    """Overlay a pure reference line through (x0, y0) with the given slope.

    Log-log slopes are powers of x; semilog-y slopes are per-unit-x decay
    exponents. Returns the legend label used.
    """
    import numpy as np

    grid = np.linspace(min(xs), max(xs), 64)
    if loglog:
        ys = y0 * (grid / x0) ** slope
        label = f"slope {slope:g} reference"
    else:
        ys = y0 * np.exp(slope * (grid - x0))
        label = f"decay {slope:g} reference"
    ax.plot(grid, ys, linestyle="--", linewidth=1.0, color="#888888",
            label=label)
    return label


def _render_regret(spec: FigureSpec) -> PlotResult:
    csvs, jsons = _split_inputs(spec)
    if len(csvs) != 1 or len(jsons) != 1:
        raise SchemaMismatch(
            "regret figure needs exactly one slopes .csv and one "
            "summary .json input")
    rows = _read_rows(csvs[0], ("T", "seed", "regret"))
    summary = _read_json(jsons[0])
    sweep = summary.get("sweep")
    if not isinstance(sweep, dict) or "points" not in sweep or "slope" not in sweep:
        raise SchemaMismatch(
            f"{jsons[0].name} has no sweep section with points and slope")
    points = [(float(T), float(r)) for T, r in sweep["points"]]
    slope = float(sweep["slope"])

    annotations = [f"fitted slope = {slope:.3f}"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.2, 3.9))
        ax.set_xscale(spec.x_scale or "log")
        ax.set_yscale(spec.y_scale or "log")
        ax.scatter([float(r["T"]) for r in rows],
                   [float(r["regret"]) for r in rows],
                   s=12, color="#9ecae1", label="per-seed runs", zorder=2)
        Ts = [p[0] for p in points]
        meds = [p[1] for p in points]
        ax.plot(Ts, meds, marker="o", color="#08519c", label="median",
                zorder=3)
        refs = spec.references or (0.5, 2.0 / 3.0)
        for s in refs:
            annotations.append(
                _reference_line(ax, Ts[0], meds[0], s, Ts, loglog=True))
        ax.annotate(annotations[0], xy=(0.04, 0.92),
                    xycoords="axes fraction", fontsize=10,
                    fontweight="bold")
        ax.set_xlabel("rounds T")
        ax.set_ylabel("individual regret")
        ax.set_title(spec.title or "regret vs horizon")
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        _save(fig, spec)
    return PlotResult(spec.output, tuple(annotations))


def _sysid_points(spec: FigureSpec) -> list[tuple[int, int, float, list[float]]]:
    """Rows of (T_collect, m, median error, per-agent errors)."""
    csvs, jsons = _split_inputs(spec)
    points = []
    if csvs and jsons:
        raise SchemaMismatch(
            "sysid_error figure takes either report .json files or one "
            "aggregate .csv, not both")
    if csvs:
        if len(csvs) != 1:
            raise SchemaMismatch("sysid_error takes a single aggregate .csv")
        for row in _read_rows(csvs[0], ("T_collect", "m", "eps")):
            points.append((int(row["T_collect"]), int(row["m"]),
                           float(row["eps"]), []))
    else:
        for path in jsons:
            report = _read_json(path)
            if "T_collect" not in report or "eps_per_agent" not in report:
                raise SchemaMismatch(
                    f"{path.name} lacks T_collect / eps_per_agent")
            per_agent = [float(e) for e in report["eps_per_agent"]]
            if not per_agent:
                raise SchemaMismatch(f"{path.name} has an empty agent list")
            points.append((int(report["T_collect"]), len(per_agent),
                           float(median(per_agent)), per_agent))
    return points


def _render_sysid(spec: FigureSpec) -> PlotResult:
    points = _sysid_points(spec)
    modal_m = Counter(m for _, m, _, _ in points).most_common(1)[0][0]
    modal_tc = Counter(tc for tc, _, _, _ in points).most_common(1)[0][0]
    vs_tc = sorted((tc, med, per) for tc, m, med, per in points
                   if m == modal_m)
    vs_m = sorted((m, med) for tc, m, med, _ in points if tc == modal_tc)

    annotations = []
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.6))
        ax1.set_xscale(spec.x_scale or "log")
        ax1.set_yscale(spec.y_scale or "log")
        for tc, _, per in vs_tc:
            if per:
                ax1.scatter([tc] * len(per), per, s=10, color="#a1d99b",
                            zorder=2)
        ax1.plot([p[0] for p in vs_tc], [p[1] for p in vs_tc], marker="o",
                 color="#006d2c", label=f"median error (m={modal_m})",
                 zorder=3)
        refs = spec.references or (-0.5,)
        for s in refs:
            annotations.append(_reference_line(
                ax1, vs_tc[0][0], vs_tc[0][1], s,
                [p[0] for p in vs_tc], loglog=True))
        ax1.set_xlabel("collection rounds")
        ax1.set_ylabel("model error")
        ax1.set_title("error vs probing budget")
        ax1.legend(loc="lower left", fontsize=8)

        ax2.set_yscale("log")
        ax2.plot([p[0] for p in vs_m], [p[1] for p in vs_m], marker="s",
                 color="#54278f")
        ax2.set_xlabel("agents m")
        ax2.set_ylabel("model error")
        ax2.set_title(f"error vs network size (budget {modal_tc})")
        ax2.set_xticks([p[0] for p in vs_m])
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        _save(fig, spec)
    return PlotResult(spec.output, tuple(annotations))


def _render_consensus(spec: FigureSpec) -> PlotResult:
    csvs, jsons = _split_inputs(spec)
    if len(csvs) != 1 or jsons:
        raise SchemaMismatch("consensus figure takes a single trace .csv")
    rows = _read_rows(csvs[0], ("run_id", "t", "consensus_dist"))
    series: dict[str, dict[int, float]] = {}
    for row in rows:
        by_t = series.setdefault(row["run_id"], {})
        t = int(row["t"])
        if t not in by_t:  # one value per round; agent rows repeat it
            by_t[t] = float(row["consensus_dist"])

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.2, 3.9))
        ax.set_xscale(spec.x_scale or "linear")
        y_scale = spec.y_scale or "log"
        any_positive = False
        for run_id in sorted(series):
            by_t = series[run_id]
            ts = sorted(by_t)
            if y_scale == "log":
                pts = [(t, by_t[t]) for t in ts if by_t[t] > 0.0]
            else:
                pts = [(t, by_t[t]) for t in ts]
            if pts:
                any_positive = True
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        linewidth=1.0, label=run_id)
        ax.set_yscale(y_scale if any_positive else "linear")
        ax.set_xlabel("round t")
        ax.set_ylabel("consensus distance")
        ax.set_title(spec.title or "policy disagreement across the network")
        if len(series) > 1:
            ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, spec)
    return PlotResult(spec.output, ())


def _render_gap(spec: FigureSpec) -> PlotResult:
    csvs, jsons = _split_inputs(spec)
    if len(csvs) != 1 or jsons:
        raise SchemaMismatch("gap figure takes a single gap .csv")
    rows = _read_rows(csvs[0], ("H", "gap"))
    pts = sorted((int(r["H"]), float(r["gap"])) for r in rows)

    annotations = []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.2, 3.9))
        ax.set_xscale(spec.x_scale or "linear")
        ax.set_yscale(spec.y_scale or "log")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                color="#a63603", label="measured max gap")
        for s in spec.references:
            annotations.append(_reference_line(
                ax, pts[0][0], pts[0][1], s, [p[0] for p in pts],
                loglog=False))
        ax.set_xlabel("memory length H")
        ax.set_ylabel("max prediction gap")
        ax.set_title(spec.title or "surrogate truncation error vs memory")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        _save(fig, spec)
    return PlotResult(spec.output, tuple(annotations))


_RENDERERS = {
    "regret": _render_regret,
    "sysid_error": _render_sysid,
    "consensus": _render_consensus,
    "gap": _render_gap,
}


def plot(spec: FigureSpec) -> PlotResult:
    """Render one figure spec to its output path; returns what was drawn."""
    return _RENDERERS[spec.kind](spec)
