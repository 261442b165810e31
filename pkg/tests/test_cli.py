import json

import pytest

from ehr_sequence_workbench import create_sample_config, parameters
from ehr_sequence_workbench.ablation import Experiment
from ehr_sequence_workbench.computational_resource_calculator import (
    estimate_memory_requirements, estimate_problem_size, get_complexity_class,
)
from ehr_sequence_workbench.main import run

TINY_EXPERIMENT = {
    "description": "tiny command-line experiment",
    "cohorts": {"initial": {"n_patients": 160, "seed": 5, "code_list_sizes": {"DX": 60, "PRO": 20, "MED": 12}}},
    "train": {"pretrain_epochs": 2, "pretrain_patience": 1, "finetune_epochs": 2, "finetune_patience": 1,
              "lr": 1e-3, "batch_size": 16, "dropout": 0.0},
    "gbdt": {"n_trees": 10, "max_depth": 3},
    "bootstrap": {"iters": 50},
    "grid": {
        "tasks": ["T2"], "models": ["LLAMA", "GBDT"], "vocab": [[5, 3]], "context": [128],
        "train_ratio": [1.0], "replicates": [0], "size": ["DeskTiny"],
        "baseline": {"vocab": [5, 3], "context": 128, "size": "DeskTiny"},
    },
    "ablations": ["baseline"],
}


@pytest.fixture
def experiment_folder(tmp_path):
    folder = tmp_path / "experiment"
    folder.mkdir()
    (folder / "experiment_data.py").write_text(f"experiment_data = {TINY_EXPERIMENT!r}\n")
    yield folder
    parameters.initialize_with_data_folder()


def test_parameters_load_from_folder_or_file(experiment_folder):
    by_folder = parameters.initialize_with_data_folder(str(experiment_folder))
    by_file = parameters.initialize_with_data_folder(str(experiment_folder / "experiment_data.py"))
    assert by_folder == by_file == TINY_EXPERIMENT
    assert parameters.get_parameter("description") == "tiny command-line experiment"
    assert parameters.get_source_file().endswith("experiment_data.py")


def test_parameter_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        parameters.resolve_experiment_file(str(tmp_path / "nowhere"))
    broken = tmp_path / "experiment_data.py"
    broken.write_text("settings = {}\n")
    with pytest.raises(RuntimeError, match="experiment_data dictionary not found"):
        parameters.load_parameters_from_file(str(broken))


def test_packaged_example_is_loaded_by_default():
    parameters.initialize_with_data_folder()
    experiment = Experiment.from_dict(parameters.get_all_parameters())
    assert experiment.trajectories() == ["initial", "latest"]


def test_report_without_results_fails(tmp_path):
    assert run(["report", "--out", str(tmp_path), "--quiet"]) == 1


def test_ablate_without_cohorts_fails(tmp_path, experiment_folder):
    assert run(["ablate", "--config", str(experiment_folder), "--out", str(tmp_path / "out"), "--quiet"]) == 1


def test_tree_pipeline_from_the_command_line(tmp_path, experiment_folder):
    out = tmp_path / "out"
    common = ["--config", str(experiment_folder), "--out", str(out), "--quiet"]
    assert run(["synth"] + common) == 0
    assert (out / "cohorts" / "initial.jsonl").exists()
    assert run(["vocab"] + common) == 0
    assert (out / "vocab" / "initial_T2_b5_i3.json").exists()
    assert run(["tokenize"] + common) == 0
    assert (out / "statistics" / "T2.csv").read_text().startswith("quantile,")


@pytest.mark.slow
def test_full_pipeline_from_the_command_line(tmp_path, experiment_folder):
    out = tmp_path / "out"
    common = ["--config", str(experiment_folder), "--out", str(out), "--quiet"]
    for verb in ("synth", "pretrain", "finetune", "ablate", "report"):
        assert run([verb] + common) == 0, verb
    assert (out / "checkpoints" / "LLAMA_T2_finetuned.npz").exists()
    assert json.loads((out / "reports" / "LLAMA_T2.json").read_text())["n"] > 0
    assert (out / "results.csv").read_text().count("\n") == 3
    first = (out / "results.csv").read_bytes()
    assert run(["ablate", "--resume"] + common) == 0
    assert (out / "results.csv").read_bytes() == first


def test_resource_estimates():
    experiment = Experiment.from_dict(TINY_EXPERIMENT)
    size = estimate_problem_size(experiment)
    assert (size["runs"], size["sequence_runs"], size["gbdt_runs"]) == (2, 1, 1)
    assert size["max_context"] == 128
    memory = estimate_memory_requirements(size, experiment)
    assert memory["per_run_mb"] > memory["weights_mb"] > 0
    assert get_complexity_class(60).startswith("Desk")
    assert get_complexity_class(10 ** 7).startswith("Cluster")


def test_sample_experiment_is_copied_once(tmp_path):
    assert create_sample_config(str(tmp_path))
    assert (tmp_path / "experiment_data.py").exists()
    assert not create_sample_config(str(tmp_path))
