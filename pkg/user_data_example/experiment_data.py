# ============================================================================
# EXPERIMENT DATA
# ============================================================================
# Full ablation study: three tasks, five sequence-model presets plus the
# boosted-tree baseline, every axis varied one at a time around the shared
# default (b=10, i=3, C=512, Medium, Cutoff, ALL concepts, full training set)
# Full-size presets; expect days of CPU time

# ============================================================================
# EXPERIMENT IDENTIFICATION
# ============================================================================
description = "Heart-failure cohort ablations: vocabulary, context, size, history, concepts, training size"

# ============================================================================
# COHORTS (ONE PER TRAJECTORY)
# ============================================================================
# Remaining SynthConfig fields come from the trajectory calibration defaults
cohorts = {
    "initial": {"n_patients": 6000, "seed": 11},
    "latest": {"n_patients": 6000, "seed": 12},
}

# Planted outcome signal shared by both cohorts
signal = {
    "risk_codes": [["E119", 0.8], ["N184", 0.6], ["J449", 0.5]],
    "order_pair": ["I214", "I509", 2.5],
    "noise_sigma": 0.5,
    "carrier_rate": 0.25,
    "order_rate": 0.5,
}

# ============================================================================
# PREPROCESSING, SPLITS AND TRAINING
# ============================================================================
vocabulary = {"binning": "uniform"}

split = {"dev_frac": 0.85, "train_frac_of_dev": 0.90, "seed": 0}

train = {
    "pretrain_epochs": 30,
    "pretrain_patience": 5,
    "finetune_epochs": 10,
    "finetune_patience": 2,
    "lr": 5e-5,
    "batch_size": 32,
    "dropout": 0.1,
    "weight_decay": 0.01,
    "mask_prob": 0.15,
    "seed": 0,
}

gbdt = {"n_trees": 100, "max_depth": 6, "learning_rate": 0.3}

bootstrap = {"iters": 1000, "level": 0.95}

# ============================================================================
# ABLATION GRID
# ============================================================================
grid = {
    "tasks": ["T1", "T2", "T3"],
    "models": ["BERT", "MBERT_lite", "LLAMA", "MAMBA", "MAMBA2", "GBDT"],
    "vocab": [[5, 3], [5, 4], [10, 3], [10, 4]],
    "context": [128, 256, 512],
    "size": ["Tiny", "Small", "Medium"],
    "history": ["Truncate0", "Truncate1y", "Truncate3y", "Cutoff", "Agg1d", "Agg2d"],
    "concepts": ["DX", "DX+VIT", "DX+VIT+LAB", "DX+VIT+LAB+MED", "ALL"],
    "train_ratio": [0.25, 0.5, 0.75, 1.0],
    "replicates": [0],
    "baseline": {
        "vocab": [10, 3], "context": 512, "size": "Medium",
        "history": "Cutoff", "concepts": "ALL", "train_ratio": 1.0,
    },
}

ablations = ["vocab", "context", "size", "history", "concepts", "train_ratio"]

jobs = 1

# ============================================================================
# EXPORT
# ============================================================================
experiment_data = {
    "description": description,
    "cohorts": cohorts,
    "signal": signal,
    "vocabulary": vocabulary,
    "split": split,
    "train": train,
    "gbdt": gbdt,
    "bootstrap": bootstrap,
    "grid": grid,
    "ablations": ablations,
    "jobs": jobs,
}
