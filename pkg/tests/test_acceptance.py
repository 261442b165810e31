from pathlib import Path

import pytest

from ehr_sequence_workbench.ablation import GBDT, Experiment, baseline_spec, load_cohorts, run, synthesize
from ehr_sequence_workbench.cohort import bayes_rate
from ehr_sequence_workbench.model_config import FAMILIES
from ehr_sequence_workbench.parameters import load_parameters_from_file

DESK_EXPERIMENT = Path(__file__).resolve().parent.parent / "desk_ablation_example" / "experiment_data.py"
TASK = "T2"

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    experiment = Experiment.from_dict(load_parameters_from_file(str(DESK_EXPERIMENT)))
    out_dir = tmp_path_factory.mktemp("desk")
    synthesize(experiment, out_dir)
    return experiment, load_cohorts(experiment, out_dir), out_dir


@pytest.fixture(scope="module")
def gbdt_row(desk):
    experiment, cohorts, out_dir = desk
    return run(baseline_spec(experiment.grid, TASK, GBDT), experiment, cohorts, out_dir)


@pytest.fixture(scope="module")
def sequence_rows(desk):
    experiment, cohorts, out_dir = desk
    return {family: run(baseline_spec(experiment.grid, TASK, family), experiment, cohorts, out_dir)
            for family in sorted(FAMILIES)}


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_sequence_models_approach_the_bayes_rate(family, desk, sequence_rows):
    experiment = desk[0]
    ceiling = bayes_rate(experiment.cohorts["initial"], n_mc=100_000, task=TASK)
    assert sequence_rows[family]["auroc"] >= 0.95 * ceiling


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_sequence_models_beat_the_frequency_baseline(family, sequence_rows, gbdt_row):
    assert sequence_rows[family]["auprc"] >= gbdt_row["auprc"] + 0.05
