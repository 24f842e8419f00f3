"""Report figures rendered to files with the non-interactive Agg canvas."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from matplotlib import rc_context
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from progfs.simulation import ScenarioConfig

__all__ = ["read_plot_data", "plot_power_curves", "plot_event_free_curves", "render_report"]

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}

_LINESTYLES = {0.0: "-", 0.5: "--"}
_PNG_META = {"Software": None}


def _new_figure(n_panels: int, ncols: int = 3, panel=(3.0, 2.4)) -> tuple[Figure, list]:
    ncols = max(1, min(ncols, n_panels))
    nrows = max(1, -(-n_panels // ncols))
    fig = Figure(figsize=(panel[0] * ncols, panel[1] * nrows), constrained_layout=True)
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False).ravel().tolist()
    for ax in axes[n_panels:]:
        ax.set_visible(False)
    return fig, axes[:n_panels]


def read_plot_data(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    for r in rows:
        r["kendall_w"] = float(r["kendall_w"])
        r["follow_up"] = float(r["follow_up"])
        r["power"] = float(r["power"])
    return rows


def plot_power_curves(rows: Iterable[dict], path: str | Path, title: str | None = None) -> Path:
    """Rejection rate against follow-up, one panel per scenario family.

    Colour distinguishes tests; solid lines are W = 0 and dashed W = 0.5.
    """
    with rc_context(STYLE):
        return _power_curves(rows, path, title)


def _power_curves(rows, path, title):
    series = defaultdict(list)
    for r in rows:
        series[(r["family"], r["test"], r["kendall_w"])].append((r["follow_up"], r["power"]))
    families = sorted({k[0] for k in series})
    tests = sorted({k[1] for k in series}, key=_test_order)
    colors = {t: f"C{i}" for i, t in enumerate(tests)}
    fig, axes = _new_figure(len(families))
    for ax, fam in zip(axes, families):
        for (f, test, w), pts in sorted(series.items(), key=lambda kv: (_test_order(kv[0][1]), kv[0][2])):
            if f != fam:
                continue
            pts.sort()
            x, y = zip(*pts)
            ax.plot(
                x,
                100 * np.asarray(y),
                linestyle=_LINESTYLES.get(w, ":"),
                marker="o",
                color=colors[test],
                label=f"{test}, W={w:g}",
            )
        ax.set_title(fam)
        ax.set_xlabel("follow-up S (days)")
        ax.set_ylabel("rejection rate (%)")
        ax.set_ylim(0, 100)
        ax.grid(alpha=0.3)
    if axes:
        axes[0].legend(loc="best", frameon=False)
    if title:
        fig.suptitle(title)
    path = Path(path)
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    return path


def _test_order(label: str) -> tuple[int, int]:
    if label == "FS":
        return (0, 0)
    try:
        return (1, int(label.split("-")[-1]))
    except ValueError:
        return (2, 0)


def plot_event_free_curves(
    configs: Sequence[ScenarioConfig], path: str | Path, horizon: float | None = None
) -> Path:
    """Theoretical marginal event-free probabilities per arm and layer, one panel per scenario family."""
    with rc_context(STYLE):
        return _event_free(configs, path, horizon)


def _event_free(configs, path, horizon):
    by_family = {}
    for c in configs:
        by_family.setdefault(c.family or c.name, c)
    horizon = horizon or max(c.follow_up for c in configs)
    t = np.linspace(0.0, horizon, 400)
    fig, axes = _new_figure(len(by_family), ncols=2, panel=(3.4, 2.6))
    for ax, (fam, cfg) in zip(axes, sorted(by_family.items())):
        for arm, spec, color in (("treatment", cfg.treatment, "C0"), ("control", cfg.control, "C3")):
            ax.plot(t, spec.death.survival(t), color=color, label=f"{arm}, death")
            ax.plot(t, spec.hosp.survival(t), color=color, linestyle="--", label=f"{arm}, hosp.")
        ax.set_title(fam)
        ax.set_xlabel("time (days)")
        ax.set_ylabel("event-free probability")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
    if axes:
        axes[0].legend(loc="best", frameon=False)
    path = Path(path)
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    return path


def render_report(
    plot_rows: list[dict], out_dir: str | Path, configs: Sequence[ScenarioConfig] = ()
) -> list[Path]:
    """Write every figure the run supports into ``out_dir/figures``."""
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if plot_rows:
        written.append(plot_power_curves(plot_rows, fig_dir / "power_vs_follow_up.png"))
    if configs:
        written.append(plot_event_free_curves(configs, fig_dir / "event_free_curves.png"))
    return written
