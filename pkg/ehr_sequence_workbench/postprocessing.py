# ============================================================================
# POSTPROCESSING MODULE
# ============================================================================
# Packages run results and training curves into xarray Datasets and pandas
# tables, and writes them as deterministic CSV files

from pathlib import Path

import numpy as np
import pandas as pd
import xarray as xr

# Identity columns of a result row, in output order; metric columns follow
KEY_COLUMNS = (
    "ablation", "axis", "axis_value", "task", "model", "size", "C", "b", "i",
    "history", "concepts", "train_ratio", "replicate", "run_id",
)
SORT_COLUMNS = ("ablation", "task", "model", "axis_order", "replicate")
METRIC_NAMES = ("auprc", "auroc", "brier")
CURVE_COLUMNS = ("stage", "epoch", "split", "metric", "value")
FLOAT_FORMAT = "%.10g"


# ============================================================================
# RESULT TABLES
# ============================================================================
def results_frame(rows):
    """
    One row per run, sorted by (ablation, task, model, axis position, replicate).

    Columns: KEY_COLUMNS, then <metric>, <metric>_lo, <metric>_hi for each
    metric, then n, n_positive, n_train.
    """
    if not rows:
        raise ValueError("no result rows")
    frame = pd.DataFrame(list(rows))
    missing = [c for c in KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"result rows lack columns {missing}")
    if "axis_order" not in frame.columns:
        frame["axis_order"] = 0
    frame = frame.sort_values(list(SORT_COLUMNS), kind="mergesort").reset_index(drop=True)
    metric_columns = [f"{m}{suffix}" for m in METRIC_NAMES for suffix in ("", "_lo", "_hi") if f"{m}{suffix}" in frame]
    tail = [c for c in ("n", "n_positive", "n_train") if c in frame]
    return frame[list(KEY_COLUMNS) + metric_columns + tail]


def write_results_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_results_csv(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Results table not found: {path}")
    return pd.read_csv(path, keep_default_na=False, dtype={"axis_value": str, "run_id": str})


def package_results(rows, description="Ablation results"):
    # Metric points and CI bounds over a ``run`` dimension, identity columns as coordinates
    frame = results_frame(rows)
    coords = {"run": frame["run_id"].to_numpy()}
    for column in KEY_COLUMNS:
        if column != "run_id":
            coords[column] = ("run", frame[column].to_numpy())
    data_vars = {
        column: ("run", frame[column].to_numpy(dtype=np.float64))
        for column in frame.columns if column not in KEY_COLUMNS
    }
    return xr.Dataset(data_vars=data_vars, coords=coords, attrs={"description": description, "n_runs": len(frame)})


def summarize(rows, metric="auprc"):
    """Replicate mean of a metric per (ablation, task, model, axis_value)."""
    frame = results_frame(rows)
    keys = ["ablation", "task", "model", "axis_value"]
    return frame.groupby(keys, sort=True)[metric].mean().reset_index()


# ============================================================================
# TRAINING CURVES
# ============================================================================
def package_curve(curve, description="Training curve"):
    """Curve points as a Dataset indexed by (stage, split, metric, epoch)."""
    if not curve:
        raise ValueError("empty training curve")
    frame = pd.DataFrame(curve, columns=list(CURVE_COLUMNS))
    indexed = frame.set_index(["stage", "split", "metric", "epoch"])["value"]
    return xr.Dataset({"value": indexed.to_xarray()}, attrs={"description": description})


def write_curve_csv(curve, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(curve), columns=list(CURVE_COLUMNS))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path
