# ============================================================================
# PLOTTING MODULE
# ============================================================================
# Ablation figures: grouped AUPRC bars with bootstrap CI whiskers, one panel
# per task, plus training-curve plots. Output is SVG with stable bytes for
# identical input

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from .postprocessing import results_frame  # noqa: E402

SVG_HASH_SALT = "ehr-sequence-workbench"
PALETTE = "colorblind"
BAR_GROUP_WIDTH = 0.8


def _configure():
    # Fixed element ids and no timestamp keep repeated renders byte-identical
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    matplotlib.rcParams["svg.fonttype"] = "path"
    sns.set_theme(style="whitegrid", palette=PALETTE)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _axis_values(frame):
    # results_frame rows are already in grid order
    return list(dict.fromkeys(frame["axis_value"].astype(str)))


# ============================================================================
# ABLATION FIGURES
# ============================================================================
def plot_ablation(rows, path, metric="auprc", title=None):
    """
    Grouped bars of ``metric`` over the ablation axis, one panel per task.

    Bars are replicate means; whiskers span the mean bootstrap interval.
    Each bar carries the gid ``bar|<task>|<model>|<axis value>``.
    """
    if not rows:
        raise ValueError("cannot plot an empty result set")
    _configure()
    frame = results_frame(rows).copy()
    frame["axis_value"] = frame["axis_value"].astype(str)
    tasks = sorted(frame["task"].unique())
    models = list(dict.fromkeys(frame["model"]))
    colors = dict(zip(models, sns.color_palette(PALETTE, len(models))))
    width = BAR_GROUP_WIDTH / len(models)

    fig, axes = plt.subplots(1, len(tasks), figsize=(4.5 * len(tasks), 4), squeeze=False, sharey=True)
    for ax, task in zip(axes[0], tasks):
        sub = frame[frame["task"] == task]
        values = _axis_values(sub)
        grouped = sub.groupby(["model", "axis_value"], sort=False)[[metric, f"{metric}_lo", f"{metric}_hi"]].mean()
        for k, model in enumerate(models):
            for x, value in enumerate(values):
                if (model, value) not in grouped.index:
                    continue
                point, lo, hi = grouped.loc[(model, value)]
                offset = x - BAR_GROUP_WIDTH / 2 + (k + 0.5) * width
                bar = ax.bar(offset, point, width=width, color=colors[model], label=model if x == 0 else None)
                bar.patches[0].set_gid(f"bar|{task}|{model}|{value}")
                ax.errorbar(offset, point, yerr=[[point - lo], [hi - point]], color="black",
                            capsize=2, linewidth=0.8, gid=f"ci|{task}|{model}|{value}")
        ax.set_xticks(np.arange(len(values)))
        ax.set_xticklabels(values, rotation=30, ha="right")
        ax.set_title(task)
        ax.set_xlabel(sub["axis"].iloc[0])
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel(metric.upper())
    axes[0][-1].legend(loc="best", fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_all_ablations(rows, out_dir, metric="auprc"):
    """Writes ``<out_dir>/<ablation>.svg`` for every ablation present in rows."""
    if not rows:
        raise ValueError("cannot plot an empty result set")
    frame = pd.DataFrame(list(rows))
    paths = []
    for ablation in sorted(frame["ablation"].unique()):
        subset = [row for row in rows if row["ablation"] == ablation]
        paths.append(plot_ablation(subset, Path(out_dir) / f"{ablation}.svg", metric=metric, title=ablation))
    return paths


# ============================================================================
# TRAINING CURVES
# ============================================================================
def plot_curve(curve, path, title=None):
    """One panel per (stage, metric) with a line per split."""
    if not curve:
        raise ValueError("cannot plot an empty training curve")
    _configure()
    frame = pd.DataFrame(curve)
    panels = list(dict.fromkeys(zip(frame["stage"], frame["metric"])))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.5), squeeze=False)
    for ax, (stage, metric) in zip(axes[0], panels):
        sub = frame[(frame["stage"] == stage) & (frame["metric"] == metric)]
        for split, points in sub.groupby("split", sort=True):
            ax.plot(points["epoch"], points["value"], marker="o", label=split)
        ax.set_title(f"{stage} {metric}")
        ax.set_xlabel("epoch")
        ax.grid(True, alpha=0.3)
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
