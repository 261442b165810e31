# ============================================================================
# EXPERIMENT DATA
# ============================================================================
# Desk-scale ablation: 2000-patient planted-signal cohort, DeskTiny presets
# at C=128 with a short high-learning-rate schedule, one task and one axis
# Finishes in well under an hour on a laptop CPU

description = "DeskTiny training-size ablation on the mortality-after-first-admission task"

cohorts = {
    "initial": {
        "n_patients": 2000,
        "seed": 7,
        # Smaller code lists keep the vocabulary in the low hundreds
        "code_list_sizes": {"DX": 150, "PRO": 60, "MED": 30},
    },
}

signal = {
    "risk_codes": [["E119", 0.8], ["N184", 0.6], ["J449", 0.5]],
    "order_pair": ["I214", "I509", 2.5],
    "noise_sigma": 0.5,
    "carrier_rate": 0.25,
    "order_rate": 0.5,
}

vocabulary = {"binning": "uniform"}

split = {"dev_frac": 0.85, "train_frac_of_dev": 0.90, "seed": 0}

train = {
    "pretrain_epochs": 5,
    "pretrain_patience": 2,
    "finetune_epochs": 5,
    "finetune_patience": 2,
    "lr": 1e-3,
    "batch_size": 32,
    "dropout": 0.1,
    "seed": 0,
}

gbdt = {"n_trees": 100, "max_depth": 6, "learning_rate": 0.3}

bootstrap = {"iters": 1000, "level": 0.95}

grid = {
    "tasks": ["T2"],
    "models": ["BERT", "MBERT_lite", "LLAMA", "MAMBA", "MAMBA2", "GBDT"],
    "vocab": [[10, 3]],
    "context": [128],
    "size": ["DeskTiny"],
    "history": ["Cutoff"],
    "concepts": ["ALL"],
    "train_ratio": [0.25, 0.5, 0.75, 1.0],
    "replicates": [0],
    "baseline": {
        "vocab": [10, 3], "context": 128, "size": "DeskTiny",
        "history": "Cutoff", "concepts": "ALL", "train_ratio": 1.0,
    },
}

ablations = ["train_ratio"]

jobs = 1

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
