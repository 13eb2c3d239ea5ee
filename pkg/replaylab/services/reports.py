from __future__ import annotations

import csv
from collections import defaultdict
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

from replaylab.core.config import RESOLVED_CONFIG_NAME, load_study_config, write_resolved_config
from replaylab.schemas.study import StudyConfig
from replaylab.services.studies import StudyOutcome

RUN_COLUMNS = ["study", "variant", "env", "capacity", "oldest_age", "ratio", "seed", "final_score"]
CURVE_COLUMNS = ["study", "variant", "env", "capacity", "oldest_age", "seed", "iteration", "return"]
SUMMARY_COLUMNS = [
    "group",
    "variant",
    "capacity",
    "oldest_age",
    "ratio",
    "p25",
    "median",
    "p75",
    "bootstrap_mean",
    "bootstrap_std",
    "ci_low",
    "ci_high",
    "envs",
    "excluded",
    "skipped",
]
RUNS_NAME = "runs.jsonl"
CURVES_NAME = "curves.csv"
SUMMARY_NAME = "summary.csv"
NOTES_NAME = "notes.csv"
SMOOTHING_WINDOW = 3


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in fieldnames})
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def _float(value: str) -> float | None:
    return float(value) if value else None


def smooth(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; early points average what is available."""
    data = np.asarray(values, dtype=np.float64)
    sums = np.cumsum(np.insert(data, 0, 0.0))
    ends = np.arange(1, data.size + 1)
    starts = np.maximum(ends - window, 0)
    return (sums[ends] - sums[starts]) / (ends - starts)


def _pyplot() -> Any:
    import matplotlib

    matplotlib.use("Agg")
    # fixed salt and no date keep SVG output byte-identical across runs
    matplotlib.rcParams.update(
        {"svg.hashsalt": "replaylab", "svg.fonttype": "none", "font.family": "DejaVu Sans", "axes.unicode_minus": False}
    )
    import matplotlib.pyplot as plt

    return plt


def _save(fig: Any, path: Path) -> Path:
    plt = _pyplot()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_heatmap(rows: Sequence[dict[str, str]], path: Path) -> Path:
    """Median improvement per (capacity, oldest age) cell, annotated with the median exactly as the CSV holds it."""
    plt = _pyplot()
    capacities = sorted({int(row["capacity"]) for row in rows})
    ages = sorted({int(row["oldest_age"]) for row in rows})
    values = np.full((len(ages), len(capacities)), np.nan)
    labels = [["" for _ in capacities] for _ in ages]
    for row in rows:
        i, j = ages.index(int(row["oldest_age"])), capacities.index(int(row["capacity"]))
        ratio = _float(row["ratio"])
        ratio_text = f"\nρ={ratio:g}" if ratio is not None else ""
        if row["skipped"] == "True" or not row["median"]:
            labels[i][j] = "skipped" + ratio_text
            continue
        values[i, j] = float(row["median"])
        labels[i][j] = f"{row['median']}%" + ratio_text
    fig, ax = plt.subplots(figsize=(1.8 * len(capacities) + 2, 1.4 * len(ages) + 1.5), constrained_layout=True)
    bound = float(np.nanmax(np.abs(values))) if np.isfinite(values).any() else 1.0
    image = ax.imshow(values, cmap="RdBu", vmin=-bound, vmax=bound, origin="lower")
    for i in range(len(ages)):
        for j in range(len(capacities)):
            ax.text(j, i, labels[i][j], ha="center", va="center", fontsize=6)
    ax.set_xticks(range(len(capacities)), [str(c) for c in capacities])
    ax.set_yticks(range(len(ages)), [str(a) for a in ages])
    ax.set_xlabel("Replay capacity")
    ax.set_ylabel("Age of oldest policy")
    fig.colorbar(image, ax=ax, label="Median improvement (%)")
    return _save(fig, path)


def plot_bars(rows: Sequence[dict[str, str]], path: Path) -> Path:
    """Median improvement bars with p25/p75 whiskers, one panel per comparison group."""
    plt = _pyplot()
    groups: dict[str, list[dict[str, str]]] = defaultdict(list)
    for row in rows:
        if row["median"]:
            groups[row["group"]].append(row)
    names = sorted(groups) or ["(no data)"]
    fig, axes = plt.subplots(1, len(names), figsize=(4.5 * len(names), 3.8), constrained_layout=True, squeeze=False)
    for ax, name in zip(axes[0], names, strict=True):
        panel = groups.get(name, [])
        labels = [row["variant"] if not row["capacity"] else f"{row['variant']}\n@{row['capacity']}" for row in panel]
        medians = np.array([float(row["median"]) for row in panel])
        lower = medians - np.array([float(row["p25"]) for row in panel])
        upper = np.array([float(row["p75"]) for row in panel]) - medians
        positions = np.arange(len(panel))
        ax.bar(positions, medians, yerr=np.vstack([lower, upper]) if panel else None, capsize=4, color="tab:blue")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(positions, labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(name)
        ax.set_ylabel("Median improvement (%)")
    return _save(fig, path)


def plot_curves(rows: Sequence[dict[str, str]], path: Path) -> Path:
    """Per-env learning curves: thin per-seed traces under the smoothed seed mean."""
    plt = _pyplot()
    # env -> variant key -> seed -> (iteration, return)
    series: dict[str, dict[str, dict[str, list[tuple[int, float]]]]] = defaultdict(
        lambda: defaultdict(lambda: defaultdict(list))
    )
    for row in rows:
        key = row["variant"] + (f" @{row['capacity']}" if row["capacity"] else "")
        if row["oldest_age"]:
            key += f"/age{row['oldest_age']}"
        series[row["env"]][key][row["seed"]].append((int(row["iteration"]), float(row["return"])))
    envs = sorted(series) or ["(no data)"]
    fig, axes = plt.subplots(1, len(envs), figsize=(4.5 * len(envs), 3.6), constrained_layout=True, squeeze=False)
    colors = plt.get_cmap("tab10")
    for ax, env in zip(axes[0], envs, strict=True):
        for index, (key, seeds) in enumerate(sorted(series.get(env, {}).items())):
            color = colors(index % 10)
            traces = []
            for _, points in sorted(seeds.items()):
                points.sort()
                ys = [y for _, y in points]
                ax.plot([x for x, _ in points], ys, color=color, alpha=0.15, linewidth=0.6)
                traces.append(ys)
            width = min(len(t) for t in traces)
            mean = np.mean([t[:width] for t in traces], axis=0)
            ax.plot(range(1, width + 1), smooth(mean), color=color, linewidth=1.6, label=key)
        ax.set_title(env)
        ax.set_xlabel("Iteration")
        ax.set_ylabel("Evaluation return")
        if series.get(env):
            ax.legend(fontsize=6, loc="best")
    return _save(fig, path)


def render_charts(out_dir: Path, kind: str) -> list[Path]:
    """Charts are drawn from the CSV files already in `out_dir`, never from in-memory results."""
    written: list[Path] = []
    summary_path = out_dir / SUMMARY_NAME
    if summary_path.exists():
        summary = read_csv(summary_path)
        if kind == "grid":
            written.append(plot_heatmap(summary, out_dir / "heatmap.svg"))
        elif summary:
            written.append(plot_bars(summary, out_dir / "improvements.svg"))
    curves_path = out_dir / CURVES_NAME
    if curves_path.exists():
        written.append(plot_curves(read_csv(curves_path), out_dir / "curves.svg"))
    return written


def emit_report(outcome: StudyOutcome, out_dir: Path, config: StudyConfig) -> list[Path]:
    if not outcome.runs:
        raise ValueError("no runs to report")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_resolved_config(config, out_dir)]

    runs_path = out_dir / RUNS_NAME
    runs_path.write_text("".join(run.model_dump_json() + "\n" for run in outcome.runs), encoding="utf-8")
    written.append(runs_path)

    written.append(_write_csv(out_dir / f"{outcome.kind}.csv", RUN_COLUMNS, (run.model_dump() for run in outcome.runs)))
    curve_rows = (
        {**run.model_dump(include=set(CURVE_COLUMNS)), "iteration": iteration, "return": value}
        for run in outcome.runs
        for iteration, value in enumerate(run.returns, start=1)
    )
    written.append(_write_csv(out_dir / CURVES_NAME, CURVE_COLUMNS, curve_rows))
    if outcome.stats:
        summary_rows = (
            {
                **stats.model_dump(),
                "envs": len(stats.per_env),
                "excluded": ";".join(stats.excluded),
            }
            for stats in outcome.stats
        )
        written.append(_write_csv(out_dir / SUMMARY_NAME, SUMMARY_COLUMNS, summary_rows))
    if outcome.notes:
        notes = ({"note": key, "value": value} for key, value in sorted(outcome.notes.items()))
        written.append(_write_csv(out_dir / NOTES_NAME, ["note", "value"], notes))

    written += render_charts(out_dir, outcome.kind)
    for path in written:
        logger.info("Wrote {path}", path=str(path))
    return written


def report_from_dir(out_dir: Path) -> list[Path]:
    """Redraw the charts of a finished study directory."""
    config = load_study_config(out_dir / RESOLVED_CONFIG_NAME)
    return render_charts(out_dir, config.study.kind)
