# ============================================================================
# MAIN EXECUTION MODULE
# ============================================================================
# Command-line entry point. Each verb is one step of the pipeline and reads
# or writes artifacts under --out:
#   synth -> vocab -> tokenize -> pretrain -> finetune, or ablate -> report

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import (
    GBDT, Experiment, baseline_spec, cohort_path, ensure_vocab, load_cohorts, prepare_run_data,
    run_all, split_records, synthesize,
)
from .build_sequence_model import build_classifier_head, build_model, load_checkpoint, save_checkpoint
from .cohort import TASK_TRAJECTORY, bayes_rate
from .computational_resource_calculator import analyze_computational_requirements
from .metrics import evaluate
from .model_config import preset
from .parameters import get_all_parameters, get_source_file, initialize_with_data_folder
from .plotting import plot_all_ablations, plot_curve
from .postprocessing import read_results_csv, summarize, write_curve_csv
from .sequence_builder import sequence_statistics
from .trainer import finetune, predict, pretrain

VERBS = ("synth", "vocab", "tokenize", "pretrain", "finetune", "ablate", "report")
BAYES_RATE_DRAWS = 20000


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ehr-workbench",
        description="Synthetic EHR cohorts, sequence-model training and ablation grids",
    )
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", default=None, help="folder holding experiment_data.py, or the file itself")
    parser.add_argument("--seed", type=int, default=None, help="overrides every cohort, split and training seed")
    parser.add_argument("--out", default="out", help="artifact folder")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes for 'ablate'")
    parser.add_argument("--resume", action="store_true", help="reuse completed runs in 'ablate'")
    parser.add_argument("--model", default=None, help="preset for 'pretrain'/'finetune' (default: first in grid)")
    parser.add_argument("--task", default=None, help="task for 'pretrain'/'finetune'/'vocab'/'tokenize'")
    parser.add_argument("--quiet", action="store_true")
    return parser


def load_experiment(args):
    initialize_with_data_folder(args.config)
    experiment = Experiment.from_dict(get_all_parameters())
    if args.seed is not None:
        experiment = experiment.with_seed(args.seed)
    if args.jobs is not None:
        experiment = replace(experiment, jobs=args.jobs)
    return experiment


def _tasks(experiment, args):
    return [args.task] if args.task else list(experiment.grid.tasks)


def _sequence_model(experiment, args):
    if args.model:
        return args.model
    models = [m for m in experiment.grid.models if m != GBDT]
    if not models:
        raise ValueError("the grid lists no sequence model; pass --model")
    return models[0]


def _checkpoint_base(out_dir, model, task, stage):
    return Path(out_dir) / "checkpoints" / f"{model}_{task}_{stage}"


# ============================================================================
# VERBS
# ============================================================================
def cmd_synth(experiment, args, verbose):
    hashes = synthesize(experiment, args.out, verbose=verbose)
    for trajectory, digest in hashes.items():
        cfg = experiment.cohorts[trajectory]
        print(f"   🔑 {trajectory} cohort sha256 {digest[:16]}")
        if verbose:
            for task, traj in TASK_TRAJECTORY.items():
                if traj == trajectory:
                    rate = bayes_rate(cfg, n_mc=BAYES_RATE_DRAWS, task=task)
                    print(f"   🎯 {task} bayes rate (AUROC of the observable score): {rate:.3f}")


def cmd_vocab(experiment, args, verbose):
    cohorts = load_cohorts(experiment, args.out)
    for task in _tasks(experiment, args):
        trajectory = TASK_TRAJECTORY[task]
        full, _, _, _ = split_records(cohorts[trajectory], task, experiment.split)
        points = dict.fromkeys(list(experiment.grid.vocab) + [experiment.grid.baseline["vocab"]])
        for b, i in points:
            vocab = ensure_vocab(args.out, trajectory, task, b, i, full, experiment.binning)
            if verbose:
                print(f"   📖 {task} b={b} i={i}: {len(vocab)} tokens")


def cmd_tokenize(experiment, args, verbose):
    cohorts = load_cohorts(experiment, args.out)
    for task in _tasks(experiment, args):
        spec = baseline_spec(experiment.grid, task, GBDT)
        data = prepare_run_data(spec, experiment, cohorts, args.out)
        stats = sequence_statistics(data.train + data.val + data.test)
        path = Path(args.out) / "statistics" / f"{task}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        stats.to_dataframe().to_csv(path, float_format="%.10g", lineterminator="\n")
        if verbose:
            print(f"   🧾 {task}: median {stats['tokens'].sel(quantile=0.5).item():.0f} tokens, "
                  f"{stats['visits'].sel(quantile=0.5).item():.0f} visits -> {path}")


def cmd_pretrain(experiment, args, verbose):
    task, model_name = _tasks(experiment, args)[0], _sequence_model(experiment, args)
    spec = baseline_spec(experiment.grid, task, model_name)
    data = prepare_run_data(spec, experiment, load_cohorts(experiment, args.out), args.out)
    train_cfg = replace(experiment.train, verbose=verbose)
    overrides = dict(experiment.model_overrides, dropout=train_cfg.dropout)
    cfg = preset(model_name, spec.size, len(data.vocab), spec.C, **overrides)
    model = build_model(cfg, seed=train_cfg.seed)
    print(f"   🧠 {model_name} {spec.size}: {model.count_parameters():,} parameters")
    result = pretrain(model, data.train, data.val, train_cfg)
    base = _checkpoint_base(args.out, model_name, task, "pretrained")
    save_checkpoint(base, model, metadata={"spec": spec.to_dict(), "best_epoch": result.best_epoch})
    write_curve_csv(result.curve, base.with_suffix(".curve.csv"))
    if result.curve:
        plot_curve(result.curve, base.with_suffix(".curve.svg"), title=f"{model_name} {task}")
    print(f"   💾 best epoch {result.best_epoch}, val loss {result.best_value} -> {base}.npz")


def cmd_finetune(experiment, args, verbose):
    task, model_name = _tasks(experiment, args)[0], _sequence_model(experiment, args)
    spec = baseline_spec(experiment.grid, task, model_name)
    data = prepare_run_data(spec, experiment, load_cohorts(experiment, args.out), args.out)
    model, _, _ = load_checkpoint(_checkpoint_base(args.out, model_name, task, "pretrained"))
    train_cfg = replace(experiment.train, verbose=verbose)
    head = build_classifier_head(model.cfg.d_m, seed=train_cfg.seed)
    result = finetune(model, head, data.train, data.val, train_cfg)
    base = _checkpoint_base(args.out, model_name, task, "finetuned")
    save_checkpoint(base, model, head, metadata={"spec": spec.to_dict(), "best_epoch": result.best_epoch})
    write_curve_csv(result.curve, base.with_suffix(".curve.csv"))

    labels = np.array([s.label for s in data.test])
    probs = predict(model, head, data.test, train_cfg.batch_size)
    report = evaluate(labels, probs, iters=experiment.bootstrap_iters, level=experiment.bootstrap_level,
                      seed=experiment.train.seed)
    path = Path(args.out) / "reports" / f"{model_name}_{task}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    for name, m in report.metrics.items():
        print(f"   📊 {name.upper()}: {m.point:.4f} [{m.ci_lo:.4f}, {m.ci_hi:.4f}]")


def cmd_ablate(experiment, args, verbose):
    for trajectory in experiment.trajectories():
        if not cohort_path(args.out, trajectory).exists():
            raise FileNotFoundError(f"Missing cohort artifact {cohort_path(args.out, trajectory)}; run 'synth' first")
    analyze_computational_requirements(experiment, jobs=experiment.jobs, verbose=verbose)
    quiet_training = replace(experiment, train=replace(experiment.train, verbose=False))
    run_all(quiet_training, args.out, jobs=experiment.jobs, resume=args.resume, verbose=verbose)


def cmd_report(experiment, args, verbose):
    frame = read_results_csv(Path(args.out) / "results.csv")
    rows = frame.to_dict(orient="records")
    paths = plot_all_ablations(rows, Path(args.out) / "figures")
    summary = summarize(rows)
    print(summary.to_string(index=False))
    for path in paths:
        print(f"   🖼️  {path}")


COMMANDS = {
    "synth": cmd_synth, "vocab": cmd_vocab, "tokenize": cmd_tokenize, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "ablate": cmd_ablate, "report": cmd_report,
}


# ============================================================================
# MAIN EXECUTION FUNCTION
# ============================================================================
def run(argv=None):
    """
    Parses arguments and executes one verb.

    Returns the process exit code: 0 on success, 1 on a reported error.
    """
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    try:
        experiment = load_experiment(args)
        if verbose:
            print("\n🚀 EHR SEQUENCE WORKBENCH")
            print("=" * 50)
            print(f"📁 Experiment: {get_source_file()}")
            print(f"📁 Output folder: {args.out}")
        COMMANDS[args.verb](experiment, args, verbose)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError, FloatingPointError) as e:
        print(f"❌ {args.verb} failed: {e}")
        return 1
    if verbose:
        print(f"✅ {args.verb} complete")
    return 0


if __name__ == "__main__":
    sys.exit(run())
