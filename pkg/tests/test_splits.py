import numpy as np
import pytest

from ehr_sequence_workbench.cohort import PatientRecord
from ehr_sequence_workbench.splits import SplitSpec, assert_disjoint, split_ids, stratified_split


def _labelled(n_pos, n_neg):
    labels = [1] * n_pos + [0] * n_neg
    return [
        PatientRecord(f"P{k:04d}", 70, "M", None, [], {"T1": y, "T2": y, "T3": y})
        for k, y in enumerate(labels)
    ]


def test_every_class_is_apportioned_by_the_fractions():
    cohort = _labelled(97, 303)
    spec = SplitSpec(dev_frac=0.85, train_frac_of_dev=0.9)
    train, val, test = stratified_split(cohort, spec)
    for label, n in ((1, 97), (0, 303)):
        count = {name: sum(rec.labels["T2"] == label for rec in part) for name, part in
                 (("train", train), ("val", val), ("test", test))}
        assert abs(count["test"] - n * 0.15) <= 1
        assert abs(count["train"] - n * 0.85 * 0.9) <= 1
        assert sum(count.values()) == n


def test_splits_are_disjoint_and_deterministic():
    cohort = _labelled(40, 60)
    spec = SplitSpec(seed=3)
    first = split_ids(cohort, spec)
    assert first == split_ids(cohort, spec)
    assert first != split_ids(cohort, SplitSpec(seed=4))
    train, val, test = first
    assert not (train & val or train & test or val & test)
    assert len(train | val | test) == 100


def test_smaller_training_ratios_are_nested():
    cohort = _labelled(50, 150)
    sizes, previous = [], set()
    for ratio in (0.1, 0.25, 0.5, 1.0):
        train, val, test = split_ids(cohort, SplitSpec(train_ratio=ratio))
        assert previous <= train
        assert (val, test) == split_ids(cohort, SplitSpec())[1:]
        sizes.append(len(train))
        previous = train
    assert sizes == sorted(sizes)


def test_tiny_classes_are_rejected():
    with pytest.raises(ValueError, match="need at least"):
        split_ids(_labelled(2, 50), SplitSpec())


def test_overlap_is_detected():
    cohort = _labelled(3, 3)
    with pytest.raises(ValueError, match="appears in splits"):
        assert_disjoint(cohort[:4], cohort[3:])


@pytest.mark.parametrize("field,value", [("dev_frac", 1.0), ("train_frac_of_dev", 0.0), ("train_ratio", 0.0)])
def test_invalid_fractions(field, value):
    with pytest.raises(ValueError):
        SplitSpec(**{field: value})


def test_split_ids_follow_task_labels():
    cohort = _labelled(20, 20)
    for rec, flip in zip(cohort, np.arange(40) % 2):
        rec.labels["T3"] = int(flip)
    train, _, test = split_ids(cohort, SplitSpec(), task="T3")
    assert abs(sum(int(r.id[1:]) % 2 for r in cohort if r.id in test) - 3) <= 1
