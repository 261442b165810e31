# ============================================================================
# SPLITS MODULE
# ============================================================================
# Stratified development/test and train/validation assignment of patients
# The same assignment serves pre-training and fine-tuning

from dataclasses import asdict, dataclass

import numpy as np

MIN_CLASS_SIZE = 3


@dataclass
class SplitSpec:
    dev_frac: float = 0.85
    train_frac_of_dev: float = 0.90
    stratify_by: str = "T2"
    train_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("dev_frac", "train_frac_of_dev"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if not 0.0 < self.train_ratio <= 1.0:
            raise ValueError(f"train_ratio must lie in (0, 1], got {self.train_ratio}")

    def to_dict(self):
        return asdict(self)


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def assert_disjoint(*splits):
    seen = {}
    for k, split in enumerate(splits):
        for rec in split:
            if rec.id in seen and seen[rec.id] != k:
                raise ValueError(f"Patient {rec.id} appears in splits {seen[rec.id]} and {k}")
            seen[rec.id] = k


def split_ids(cohort, spec, task=None):
    """
    Patient ids of (train, val, test), apportioned per class.

    Per class: dev = round(n * dev_frac), train = round(dev * train_frac_of_dev),
    val = dev - train, test = n - dev. ``train_ratio`` keeps a prefix of the
    shuffled training ids, so smaller ratios are nested in larger ones.
    """
    task = task or spec.stratify_by
    by_class = {0: [], 1: []}
    for rec in cohort:
        by_class[int(rec.labels[task])].append(rec.id)
    for label, ids in by_class.items():
        if len(ids) < MIN_CLASS_SIZE:
            raise ValueError(f"Class {label} of {task} has {len(ids)} members, need at least {MIN_CLASS_SIZE}")

    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    for label in (0, 1):
        ids = sorted(by_class[label])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_dev = _round_half_up(len(ids) * spec.dev_frac)
        n_train = _round_half_up(n_dev * spec.train_frac_of_dev)
        n_used = _round_half_up(n_train * spec.train_ratio)
        train.extend(ids[:n_used])
        val.extend(ids[n_train:n_dev])
        test.extend(ids[n_dev:])
    return set(train), set(val), set(test)


def stratified_split(cohort, spec, task=None):
    """Splits records into (train, val, test) lists in cohort order."""
    train_ids, val_ids, test_ids = split_ids(cohort, spec, task)
    train = [rec for rec in cohort if rec.id in train_ids]
    val = [rec for rec in cohort if rec.id in val_ids]
    test = [rec for rec in cohort if rec.id in test_ids]
    assert_disjoint(train, val, test)
    return train, val, test
