import numpy as np
import pytest

from ehr_sequence_workbench.cohort import SynthConfig, generate_cohort
from ehr_sequence_workbench.model_config import FAMILIES, preset
from ehr_sequence_workbench.build_sequence_model import build_model
from ehr_sequence_workbench.sequence_builder import collate, eligible_encounters, tokenize_cohort
from ehr_sequence_workbench.vocabulary import build_vocab

SMALL_CODE_LISTS = {"DX": 60, "PRO": 20, "MED": 12}


def numerical_gradient(loss_fn, array, h=1e-5, indices=None):
    """Central differences of a scalar loss with respect to entries of ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    if indices is None:
        indices = list(np.ndindex(array.shape))
    for idx in indices:
        original = array[idx]
        array[idx] = original + h
        up = loss_fn()
        array[idx] = original - h
        down = loss_fn()
        array[idx] = original
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))


@pytest.fixture
def finite_difference():
    return numerical_gradient


@pytest.fixture
def rel_err():
    return relative_error


@pytest.fixture(scope="session")
def small_config():
    return SynthConfig.for_trajectory("initial", 60, seed=3, code_list_sizes=SMALL_CODE_LISTS)


@pytest.fixture(scope="session")
def small_cohort(small_config):
    return generate_cohort(small_config)


@pytest.fixture(scope="session")
def small_vocab(small_cohort):
    return build_vocab(small_cohort, b=5, i=3)


@pytest.fixture(scope="session")
def eligible_cohort(small_cohort):
    return [rec for rec in small_cohort if eligible_encounters(rec)]


@pytest.fixture(scope="session")
def small_sequences(eligible_cohort, small_vocab):
    return tokenize_cohort(eligible_cohort, small_vocab, 32, task="T2")


@pytest.fixture
def small_batch(small_sequences):
    return collate(small_sequences[:3])


@pytest.fixture(params=sorted(FAMILIES))
def desk_model(request, small_vocab):
    cfg = preset(request.param, "DeskTiny", len(small_vocab), 32, dropout=0.0)
    return build_model(cfg, seed=1)


def result_row(model, axis_value, order, auprc, task="T2", ablation="train_ratio", replicate=0):
    return {
        "ablation": ablation, "axis": ablation, "axis_value": axis_value, "axis_order": order,
        "task": task, "model": model, "size": "DeskTiny", "C": 128, "b": 10, "i": 3,
        "history": "Cutoff", "concepts": "ALL", "train_ratio": float(axis_value), "replicate": replicate,
        "run_id": f"{model}-{axis_value}-{replicate}", "n": 40, "n_positive": 10, "n_train": 100,
        "auprc": auprc, "auprc_lo": auprc - 0.05, "auprc_hi": auprc + 0.05,
        "auroc": 0.7, "auroc_lo": 0.6, "auroc_hi": 0.8,
        "brier": 0.2, "brier_lo": 0.15, "brier_hi": 0.25,
    }


@pytest.fixture
def result_rows():
    rows = []
    for model, shift in (("MAMBA", 0.1), ("GBDT", 0.0)):
        for order, ratio in enumerate(("0.25", "0.5", "1")):
            for replicate in (1, 0):
                rows.append(result_row(model, ratio, order, 0.3 + shift + 0.05 * order + 0.01 * replicate,
                                       replicate=replicate))
    return rows
