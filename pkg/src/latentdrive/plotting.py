"""PNG figures for training curves and evaluation summaries."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import UnavailableError  # noqa: E402
from .metrics import infractions_per_km, succeeded  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _column(rows, key):
    xs, ys = [], []
    for r in rows:
        if r.get(key) not in (None, ""):
            xs.append(float(r["env-steps"]))
            ys.append(float(r[key]))
    return xs, ys


def plot_trainlog(csv_path: str, out_path: str) -> str:
    """Episode return, world-model loss and evaluation success against env steps."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
        for ax, key, label in zip(
            axes,
            ("episode-return", "wm-loss", "eval-success"),
            ("episode return", "world-model loss", "eval success rate"),
        ):
            xs, ys = _column(rows, key)
            ax.plot(xs, ys, marker="o" if len(xs) < 30 else None, lw=1.2)
            ax.set_xlabel("env steps")
            ax.set_title(label)
        if _column(rows, "wm-loss")[1]:
            axes[1].set_yscale("log")
        return _save(fig, out_path)


def plot_success(logs, out_path: str) -> str:
    """Bar chart of per-kind success rate and mean route completion."""
    groups: dict = {}
    for log in logs:
        groups.setdefault(log.kind or "plain", []).append(log)
    kinds = sorted(groups)
    success = [sum(succeeded(l) for l in groups[k]) / len(groups[k]) for k in kinds]
    completion = [sum(l.completion for l in groups[k]) / len(groups[k]) for k in kinds]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(kinds) + 2), 3.6))
        pos = range(len(kinds))
        ax.bar([p - 0.2 for p in pos], success, width=0.4, label="success rate")
        ax.bar([p + 0.2 for p in pos], completion, width=0.4, label="route completion")
        ax.set_xticks(list(pos))
        ax.set_xticklabels(kinds, rotation=35, ha="right")
        ax.set_ylim(0, 1.05)
        ax.legend(loc="upper right")
        return _save(fig, out_path)


def plot_infractions(logs, out_path: str, table=None) -> str | None:
    """Infractions per driven kilometre by infraction kind; skipped when nothing was driven."""
    try:
        rates = infractions_per_km(logs, table)
    except UnavailableError:
        return None
    kinds = list(rates)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.barh(kinds, [rates[k] for k in kinds], color="tab:red")
        ax.set_xlabel("infractions per km")
        return _save(fig, out_path)


def report_figures(logs, out_dir: str, table=None) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = [plot_success(logs, os.path.join(out_dir, "success.png"))]
    p = plot_infractions(logs, os.path.join(out_dir, "infractions.png"), table)
    if p:
        paths.append(p)
    return paths
