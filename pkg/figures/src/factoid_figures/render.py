"""Render publication-style figures from a results.csv produced by factoid-forge.

The CSV contract is the runner's long format:

    run_id, seed, stage_index, stage_dataset, strategy, metric, value

Four figure kinds are supported:

  probe_hist       layer-probe histograms: one bar group per probe point,
                   one series per run_id
  ablation_curve   final-stage accuracy versus run_id (one line per strategy),
                   for ratio/length sweeps encoded as separate run_ids
  stage_bars       accuracy after each stage, grouped by run_id
  comparison_bars  final-stage accuracy per run_id side by side

Rendering is read-only, headless, and deterministic: SVG output with a fixed
hash salt and no embedded timestamps. Accuracy axes are scaled to [0, 100].
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "factoid-figures"

CSV_COLUMNS = ("run_id", "seed", "stage_index", "stage_dataset", "strategy", "metric", "value")
KINDS = ("probe_hist", "ablation_curve", "stage_bars", "comparison_bars")

_PROBE_METRIC = re.compile(r"probe_freq_layer_(\d+)$")


class FigureError(ValueError):
    """Bad spec, schema mismatch, or empty selection."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv: str
    out: str
    filters: dict = field(default_factory=dict)
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r} (choices: {KINDS})")
        for column in self.filters:
            if column not in CSV_COLUMNS:
                raise FigureError(
                    f"filter column {column!r} not in the CSV schema; expected one of {CSV_COLUMNS}"
                )

    @classmethod
    def from_json_file(cls, path) -> "FigureSpec":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        unknown = set(obj) - {"kind", "csv", "out", "filters", "title"}
        if unknown:
            raise FigureError(f"unknown spec keys: {sorted(unknown)}")
        return cls(
            kind=obj["kind"], csv=obj["csv"], out=obj["out"],
            filters=obj.get("filters", {}), title=obj.get("title"),
        )


@dataclass(frozen=True)
class RenderResult:
    out_path: str
    kind: str
    x_points: int       # bars/ticks along the x axis
    series: int         # plotted series (lines or bar groups)


def read_rows(csv_path) -> list[dict]:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise FigureError(
                f"results csv is missing columns {missing}; expected schema {CSV_COLUMNS}"
            )
        return list(reader)


def _apply_filters(rows, filters) -> list[dict]:
    for column, value in filters.items():
        rows = [r for r in rows if r[column] == str(value)]
    return rows


def _mean_rows(rows):
    return [r for r in rows if r["seed"] == "mean"]


def _final_stage(rows) -> dict[str, str]:
    last: dict[str, int] = {}
    for r in rows:
        last[r["run_id"]] = max(last.get(r["run_id"], 0), int(r["stage_index"]))
    return {run: str(stage) for run, stage in last.items()}


def _save(fig, spec) -> None:
    fig.savefig(spec.out, format="svg", metadata={"Date": None})
    plt.close(fig)


def _new_axes(spec, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if spec.title:
        ax.set_title(spec.title)
    return fig, ax


def _render_probe_hist(spec, rows) -> RenderResult:
    picked: dict[str, dict[int, float]] = {}
    for r in rows:
        m = _PROBE_METRIC.match(r["metric"])
        if m:
            picked.setdefault(r["run_id"], {})[int(m.group(1))] = float(r["value"])
    if not picked:
        raise FigureError("no probe_freq_layer_* rows after filters; nothing to draw")
    layers = sorted({layer for series in picked.values() for layer in series})
    fig, ax = _new_axes(spec, "layer index", "normalized frequency of the correct token")
    width = 0.8 / len(picked)
    for i, (run_id, series) in enumerate(sorted(picked.items())):
        xs = [l + (i - (len(picked) - 1) / 2) * width for l in layers]
        ax.bar(xs, [series.get(l, 0.0) for l in layers], width=width, label=run_id)
    ax.set_xticks(layers)
    ax.legend()
    _save(fig, spec)
    return RenderResult(spec.out, spec.kind, x_points=len(layers), series=len(picked))


def _render_ablation_curve(spec, rows) -> RenderResult:
    rows = [r for r in rows if r["metric"] == "accuracy"]
    final = _final_stage(rows)
    rows = [r for r in rows if r["stage_index"] == final[r["run_id"]]]
    by_strategy: dict[str, dict[str, float]] = {}
    for r in rows:
        by_strategy.setdefault(r["strategy"], {})[r["run_id"]] = 100.0 * float(r["value"])
    if not by_strategy:
        raise FigureError("no accuracy rows after filters; nothing to draw")
    run_ids = sorted({run for series in by_strategy.values() for run in series})
    fig, ax = _new_axes(spec, "configuration", "accuracy")
    for strategy, series in sorted(by_strategy.items()):
        ys = [series.get(run) for run in run_ids]
        ax.plot(range(len(run_ids)), ys, marker="o", label=strategy)
    ax.set_xticks(range(len(run_ids)), run_ids, rotation=20, ha="right")
    ax.set_ylim(0, 100)
    ax.legend()
    _save(fig, spec)
    return RenderResult(spec.out, spec.kind, x_points=len(run_ids), series=len(by_strategy))


def _render_stage_bars(spec, rows) -> RenderResult:
    rows = [r for r in rows if r["metric"] == "accuracy"]
    if not rows:
        raise FigureError("no accuracy rows after filters; nothing to draw")
    stages = sorted({int(r["stage_index"]) for r in rows})
    runs = sorted({r["run_id"] for r in rows})
    fig, ax = _new_axes(spec, "stage", "accuracy")
    width = 0.8 / len(runs)
    for i, run in enumerate(runs):
        values = {int(r["stage_index"]): 100.0 * float(r["value"]) for r in rows if r["run_id"] == run}
        xs = [s + (i - (len(runs) - 1) / 2) * width for s in stages]
        ax.bar(xs, [values.get(s, 0.0) for s in stages], width=width, label=run)
    ax.set_xticks(stages)
    ax.set_ylim(0, 100)
    ax.legend()
    _save(fig, spec)
    return RenderResult(spec.out, spec.kind, x_points=len(stages), series=len(runs))


def _render_comparison_bars(spec, rows) -> RenderResult:
    acc = [r for r in rows if r["metric"] == "accuracy"]
    final = _final_stage(acc)
    means = {r["run_id"]: 100.0 * float(r["value"])
             for r in acc if r["stage_index"] == final[r["run_id"]]}
    if not means:
        raise FigureError("no accuracy rows after filters; nothing to draw")
    runs = sorted(means)
    fig, ax = _new_axes(spec, "configuration", "accuracy")
    ax.bar(range(len(runs)), [means[r] for r in runs])
    ax.set_xticks(range(len(runs)), runs, rotation=20, ha="right")
    ax.set_ylim(0, 100)
    _save(fig, spec)
    return RenderResult(spec.out, spec.kind, x_points=len(runs), series=1)


_RENDERERS = {
    "probe_hist": _render_probe_hist,
    "ablation_curve": _render_ablation_curve,
    "stage_bars": _render_stage_bars,
    "comparison_bars": _render_comparison_bars,
}


def render(spec: FigureSpec) -> RenderResult:
    """Render one figure; raises FigureError on schema problems or empty selection."""
    rows = _apply_filters(read_rows(spec.csv), spec.filters)
    rows = _mean_rows(rows) or rows   # prefer seed-mean rows when present
    if not rows:
        raise FigureError(f"filters {spec.filters} selected zero rows from {spec.csv}")
    return _RENDERERS[spec.kind](spec, rows)


def render_all(csv_path, out_dir) -> list[RenderResult]:
    """Render every figure kind with default settings into out_dir."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    results = []
    for kind in KINDS:
        spec = FigureSpec(kind=kind, csv=str(csv_path),
                          out=os.path.join(out_dir, f"{kind}.svg"))
        try:
            results.append(render(spec))
        except FigureError as err:
            raise FigureError(f"{kind}: {err}") from err
    return results
