# ============================================================================
# ABLATION HARNESS MODULE
# ============================================================================
# Expands one-axis experiment grids into run specs, executes each run
# (pre-training, fine-tuning, bootstrap evaluation) and collects the result
# rows, figures and manifest of an experiment output folder

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from . import __version__
from .build_sequence_model import build_classifier_head, build_model, save_checkpoint
from .cohort import TASK_TRAJECTORY, TASKS, SignalSpec, SynthConfig, cohort_hash, generate_cohort, read_cohort, write_cohort
from .gbdt import GbdtConfig, featurize, fit, predict_proba, to_matrix
from .metrics import evaluate
from .model_config import FAMILIES, SIZES, preset
from .plotting import plot_all_ablations
from .postprocessing import write_curve_csv, write_results_csv
from .sequence_builder import CONCEPT_SETS, HistoryMode, eligible_encounters, tokenize_cohort
from .splits import SplitSpec, assert_disjoint, split_ids
from .trainer import TrainConfig, finetune, predict, pretrain
from .vocabulary import Vocabulary, build_vocab

AXES = ("vocab", "context", "size", "history", "concepts", "train_ratio")
BASELINE = "baseline"
GBDT = "GBDT"
MODEL_CHOICES = tuple(FAMILIES) + (GBDT,)

ALLOWED_VALUES = {
    "vocab": [(b, i) for b in (5, 10) for i in (3, 4)],
    "context": [128, 256, 512, 1024],
    "size": list(SIZES),
    "history": ["Truncate0", "Truncate1y", "Truncate3y", "Cutoff", "Agg1d", "Agg2d"],
    "concepts": list(CONCEPT_SETS),
    "train_ratio": [0.25, 0.5, 0.75, 1.0],
}
# Shared default every ablation pins its other axes to
DEFAULT_BASELINE = {
    "vocab": (10, 3), "context": 512, "size": "Medium",
    "history": "Cutoff", "concepts": "ALL", "train_ratio": 1.0,
}


def axis_label(axis, value):
    if axis == "vocab":
        return f"b{value[0]}_i{value[1]}"
    if axis == "train_ratio":
        return f"{float(value):g}"
    return str(value)


# ============================================================================
# EXPERIMENT GRID
# ============================================================================
@dataclass
class ExperimentGrid:
    """
    Axis values of an experiment plus the ablations to run over them.

    Each named ablation varies exactly one axis; every other axis is pinned to
    ``baseline``. The ``baseline`` ablation pins all axes.
    """

    tasks: list = field(default_factory=lambda: list(TASKS))
    models: list = field(default_factory=lambda: list(MODEL_CHOICES))
    vocab: list = field(default_factory=lambda: list(ALLOWED_VALUES["vocab"]))
    context: list = field(default_factory=lambda: [128, 256, 512])
    size: list = field(default_factory=lambda: ["Tiny", "Small", "Medium"])
    history: list = field(default_factory=lambda: list(ALLOWED_VALUES["history"]))
    concepts: list = field(default_factory=lambda: list(CONCEPT_SETS))
    train_ratio: list = field(default_factory=lambda: list(ALLOWED_VALUES["train_ratio"]))
    replicates: list = field(default_factory=lambda: [0])
    ablations: list = field(default_factory=lambda: list(AXES))
    baseline: dict = field(default_factory=lambda: dict(DEFAULT_BASELINE))

    def __post_init__(self):
        self.vocab = [tuple(v) for v in self.vocab]
        self.baseline = dict(DEFAULT_BASELINE, **self.baseline)
        self.baseline["vocab"] = tuple(self.baseline["vocab"])
        for task in self.tasks:
            if task not in TASKS:
                raise ValueError(f"Unknown task '{task}', expected one of {list(TASKS)}")
        for model in self.models:
            if model not in MODEL_CHOICES:
                raise ValueError(f"Unknown model '{model}', expected one of {list(MODEL_CHOICES)}")
        for axis in AXES:
            for value in list(getattr(self, axis)) + [self.baseline[axis]]:
                if value not in ALLOWED_VALUES[axis]:
                    raise ValueError(f"Value {value!r} is not a valid {axis} axis point")
        for name in self.ablations:
            if name != BASELINE and name not in AXES:
                raise ValueError(f"Unknown ablation '{name}', expected 'baseline' or one of {list(AXES)}")

    def to_dict(self):
        data = asdict(self)
        data["vocab"] = [list(v) for v in self.vocab]
        data["baseline"]["vocab"] = list(self.baseline["vocab"])
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class RunSpec:
    ablation: str
    axis: str
    axis_value: str
    axis_order: int
    task: str
    model: str
    b: int
    i: int
    C: int
    size: str
    history: str
    concepts: str
    train_ratio: float
    replicate: int

    @property
    def trajectory(self):
        return TASK_TRAJECTORY[self.task]

    def to_dict(self):
        return asdict(self)

    def configuration(self):
        # Fields that determine the computation; ablation labels excluded
        data = self.to_dict()
        for key in ("ablation", "axis", "axis_value", "axis_order"):
            data.pop(key)
        return data


def _spec(grid, ablation, axis, order, value, task, model, replicate):
    point = dict(grid.baseline)
    if axis is not None:
        point[axis] = value
    b, i = point["vocab"]
    return RunSpec(
        ablation=ablation, axis=axis or BASELINE, axis_value=axis_label(axis, value) if axis else BASELINE,
        axis_order=order, task=task, model=model, b=int(b), i=int(i), C=int(point["context"]),
        size=point["size"], history=point["history"], concepts=point["concepts"],
        train_ratio=float(point["train_ratio"]), replicate=int(replicate),
    )


def baseline_spec(grid, task, model, replicate=0):
    return _spec(grid, BASELINE, None, 0, None, task, model, replicate)


def expand(grid):
    """
    Run specs of every ablation in the grid, in a fixed order:
    ablation, task, model, axis value, replicate.
    """
    if not grid.tasks or not grid.models or not grid.replicates or not grid.ablations:
        raise ValueError("empty experiment grid")
    specs = []
    for ablation in grid.ablations:
        axis = None if ablation == BASELINE else ablation
        values = [None] if axis is None else list(getattr(grid, axis))
        if not values:
            raise ValueError(f"empty experiment grid: axis '{axis}' has no values")
        for task in grid.tasks:
            for model in grid.models:
                for order, value in enumerate(values):
                    for replicate in grid.replicates:
                        specs.append(_spec(grid, ablation, axis, order, value, task, model, replicate))
    return specs


# ============================================================================
# EXPERIMENT
# ============================================================================
@dataclass
class Experiment:
    """Typed view of an experiment_data dictionary."""

    description: str = "EHR sequence-model ablation"
    cohorts: dict = field(default_factory=dict)
    grid: ExperimentGrid = field(default_factory=ExperimentGrid)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    binning: str = "uniform"
    model_overrides: dict = field(default_factory=dict)
    bootstrap_iters: int = 1000
    bootstrap_level: float = 0.95
    jobs: int = 1

    @classmethod
    def from_dict(cls, data):
        signal = SignalSpec.from_dict(data["signal"]) if "signal" in data else SignalSpec()
        cohorts = {}
        for trajectory, fields in data.get("cohorts", {}).items():
            fields = dict(fields)
            n_patients, seed = fields.pop("n_patients"), fields.pop("seed", 0)
            fields.setdefault("signal_spec", signal)
            cohorts[trajectory] = SynthConfig.for_trajectory(trajectory, n_patients, seed, **fields)
        grid = dict(data.get("grid", {}))
        if "ablations" in data:
            grid["ablations"] = data["ablations"]
        bootstrap = data.get("bootstrap", {})
        return cls(
            description=data.get("description", cls.description),
            cohorts=cohorts,
            grid=ExperimentGrid.from_dict(grid),
            train=TrainConfig.from_dict(data.get("train", {})),
            split=SplitSpec(**data.get("split", {})),
            gbdt=GbdtConfig(**data.get("gbdt", {})),
            binning=data.get("vocabulary", {}).get("binning", "uniform"),
            model_overrides=dict(data.get("model_overrides", {})),
            bootstrap_iters=bootstrap.get("iters", 1000),
            bootstrap_level=bootstrap.get("level", 0.95),
            jobs=data.get("jobs", 1),
        )

    def to_dict(self):
        return {
            "description": self.description,
            "cohorts": {name: cfg.to_dict() for name, cfg in self.cohorts.items()},
            "grid": self.grid.to_dict(),
            "train": self.train.to_dict(),
            "split": self.split.to_dict(),
            "gbdt": self.gbdt.to_dict(),
            "binning": self.binning,
            "model_overrides": self.model_overrides,
            "bootstrap": {"iters": self.bootstrap_iters, "level": self.bootstrap_level},
        }

    def with_seed(self, seed):
        """Copy with every cohort, split and training seed set to ``seed``."""
        return replace(
            self,
            cohorts={name: replace(cfg, seed=seed) for name, cfg in self.cohorts.items()},
            split=replace(self.split, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def trajectories(self):
        return sorted({TASK_TRAJECTORY[task] for task in self.grid.tasks})


def run_id(spec, experiment, cohort_digest, code_version=__version__):
    """
    Content hash of a run: its configuration, the settings it depends on, the
    cohort and the code version. Identical configurations requested by
    different ablations share one id.
    """
    settings = experiment.to_dict()
    payload = {
        "spec": spec.configuration(),
        "train": settings["train"],
        "split": settings["split"],
        "gbdt": settings["gbdt"],
        "binning": settings["binning"],
        "model_overrides": settings["model_overrides"],
        "bootstrap": settings["bootstrap"],
        "cohort": cohort_digest,
        "code_version": code_version,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


# ============================================================================
# ARTIFACTS
# ============================================================================
def cohort_path(out_dir, trajectory):
    return Path(out_dir) / "cohorts" / f"{trajectory}.jsonl"


def synthesize(experiment, out_dir, verbose=False):
    """Generates and writes the cohort of every trajectory the grid needs; returns their hashes."""
    hashes = {}
    for trajectory in experiment.trajectories():
        if trajectory not in experiment.cohorts:
            raise ValueError(f"No cohort settings for trajectory '{trajectory}'")
        cohort = generate_cohort(experiment.cohorts[trajectory])
        path = write_cohort(cohort_path(out_dir, trajectory), cohort)
        hashes[trajectory] = cohort_hash(cohort)
        if verbose:
            print(f"   🧬 {trajectory}: {len(cohort)} patients -> {path}")
    return hashes


def load_cohorts(experiment, out_dir):
    cohorts = {}
    for trajectory in experiment.trajectories():
        path = cohort_path(out_dir, trajectory)
        if not path.exists():
            raise FileNotFoundError(f"Missing cohort artifact {path}; run the 'synth' step first")
        cohorts[trajectory] = read_cohort(path)
    return cohorts


def _write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def split_records(cohort, task, split, train_ratio=1.0):
    """(full train, train at ratio, val, test) record lists of a task's stratified split."""
    usable = [rec for rec in cohort if eligible_encounters(rec)]
    train_ids, val_ids, test_ids = split_ids(usable, replace(split, stratify_by=task, train_ratio=1.0), task)
    used_ids, _, _ = split_ids(usable, replace(split, stratify_by=task, train_ratio=train_ratio), task)
    full = [rec for rec in usable if rec.id in train_ids]
    train = [rec for rec in usable if rec.id in used_ids]
    val = [rec for rec in usable if rec.id in val_ids]
    test = [rec for rec in usable if rec.id in test_ids]
    assert_disjoint(full, val, test)
    return full, train, val, test


def ensure_vocab(out_dir, trajectory, task, b, i, train_records, binning="uniform"):
    """
    Loads the cached vocabulary of a (trajectory, task, b, i) training split.

    The cache is rebuilt when it was fitted on other training records or with
    another binning method, e.g. after re-synthesizing with a new seed.
    """
    path = Path(out_dir) / "vocab" / f"{trajectory}_{task}_b{b}_i{i}.json"
    digest = cohort_hash(train_records)
    if path.exists():
        data = json.loads(path.read_text())
        if data.get("training_digest") == digest and data.get("binning") == binning:
            return Vocabulary.from_dict(data)
    vocab = build_vocab(train_records, b, i, binning)
    _write_atomic(path, json.dumps(dict(vocab.to_dict(), training_digest=digest), sort_keys=True))
    return vocab


@dataclass
class RunData:
    vocab: Vocabulary
    train: list
    val: list
    test: list


def prepare_run_data(spec, experiment, cohorts, out_dir):
    """Splits, vocabulary and tokenized sequences of one run."""
    if spec.trajectory not in cohorts:
        raise FileNotFoundError(f"Missing cohort for trajectory '{spec.trajectory}'")
    full, train, val, test = split_records(cohorts[spec.trajectory], spec.task, experiment.split, spec.train_ratio)
    vocab = ensure_vocab(out_dir, spec.trajectory, spec.task, spec.b, spec.i, full, experiment.binning)
    hist = HistoryMode.parse(spec.history)
    concepts = CONCEPT_SETS[spec.concepts]

    def tok(records):
        return tokenize_cohort(records, vocab, spec.C, hist=hist, task=spec.task, concepts=concepts)

    return RunData(vocab=vocab, train=tok(train), val=tok(val), test=tok(test))


# ============================================================================
# SINGLE RUN
# ============================================================================
def train_sequence_model(spec, experiment, data, checkpoint=None):
    """Pre-trains and fine-tunes one preset; returns (model, head, curve)."""
    train_cfg = replace(experiment.train, seed=experiment.train.seed + spec.replicate)
    overrides = dict(experiment.model_overrides, dropout=train_cfg.dropout)
    cfg = preset(spec.model, spec.size, len(data.vocab), spec.C, **overrides)
    model = build_model(cfg, seed=train_cfg.seed)
    pre = pretrain(model, data.train, data.val, train_cfg)
    head = build_classifier_head(cfg.d_m, seed=train_cfg.seed)
    fine = finetune(model, head, data.train, data.val, train_cfg)
    if checkpoint is not None:
        save_checkpoint(checkpoint, model, head, metadata={"spec": spec.to_dict()})
    return model, head, pre.curve + fine.curve


def gbdt_probabilities(experiment, data):
    n_features = len(data.vocab)
    X_train = to_matrix([featurize(s, data.vocab) for s in data.train], n_features)
    X_test = to_matrix([featurize(s, data.vocab) for s in data.test], n_features)
    model = fit(X_train, [s.label for s in data.train], experiment.gbdt)
    return predict_proba(model, X_test)


def run(spec, experiment, cohorts, out_dir, rid=None):
    """
    Executes one run end to end and returns its result row.

    Sequence models are pre-trained and fine-tuned on the training split with
    early stopping on validation; GBDT is fitted on training frequency vectors.
    Both are scored on the held-out test split.
    """
    data = prepare_run_data(spec, experiment, cohorts, out_dir)
    curve = []
    if spec.model == GBDT:
        probs = gbdt_probabilities(experiment, data)
    else:
        model, head, curve = train_sequence_model(spec, experiment, data)
        probs = predict(model, head, data.test, experiment.train.batch_size)
    labels = np.array([s.label for s in data.test])
    report = evaluate(labels, probs, iters=experiment.bootstrap_iters,
                      level=experiment.bootstrap_level, seed=spec.replicate)
    row = dict(spec.to_dict(), run_id=rid or "", n_train=len(data.train))
    row.update(report.to_row())
    if rid and curve:
        write_curve_csv(curve, Path(out_dir) / "runs" / f"{rid}_curve.csv")
    return row


def _execute(spec, experiment, cohorts, out_dir, rid):
    row = run(spec, experiment, cohorts, out_dir, rid)
    _write_atomic(run_path(out_dir, rid), json.dumps(row, sort_keys=True))
    return row


def _run_worker(args):
    # Process-pool entry point; each worker reads the cohorts from disk
    spec, experiment, out_dir, rid = args
    return _execute(spec, experiment, load_cohorts(experiment, out_dir), out_dir, rid)


def run_path(out_dir, rid):
    return Path(out_dir) / "runs" / f"{rid}.json"


# ============================================================================
# FULL ABLATION
# ============================================================================
def run_all(experiment, out_dir, jobs=1, resume=False, verbose=True):
    """
    Runs every spec of the grid and writes results.csv, figures and manifest.json.

    Completed runs are stored as ``runs/<run id>.json``; with ``resume`` those
    are reused instead of recomputed.
    """
    out_dir = Path(out_dir)
    cohorts = load_cohorts(experiment, out_dir)
    hashes = {name: cohort_hash(cohort) for name, cohort in cohorts.items()}
    specs = expand(experiment.grid)
    ids = [run_id(spec, experiment, hashes[spec.trajectory]) for spec in specs]

    rows_by_id = {}
    pending, queued = [], set()
    for spec, rid in zip(specs, ids):
        if rid in rows_by_id or rid in queued:
            continue
        path = run_path(out_dir, rid)
        if resume and path.exists():
            rows_by_id[rid] = json.loads(path.read_text())
        else:
            pending.append((spec, experiment, out_dir, rid))
            queued.add(rid)
    if verbose:
        print(f"🚀 {len(specs)} runs, {len(rows_by_id)} reused, {len(pending)} to execute on {jobs} worker(s)")

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(tqdm(pool.map(_run_worker, pending), total=len(pending), disable=not verbose))
    else:
        results = [_execute(spec, experiment, cohorts, out_dir, rid)
                   for spec, _, _, rid in tqdm(pending, disable=not verbose)]
    for (_, _, _, rid), row in zip(pending, results):
        rows_by_id[rid] = row

    rows = []
    for spec, rid in zip(specs, ids):
        # Re-label shared executions with the ablation that requested them
        row = dict(rows_by_id[rid])
        row.update(spec.to_dict(), run_id=rid)
        rows.append(row)

    results_path = write_results_csv(rows, out_dir / "results.csv")
    figures = plot_all_ablations(rows, out_dir / "figures")
    manifest = {
        "code_version": __version__,
        "cohort_hashes": hashes,
        "experiment": experiment.to_dict(),
        "runs": {rid: hashlib.sha256(json.dumps(rows_by_id[rid], sort_keys=True).encode()).hexdigest()
                 for rid in sorted(rows_by_id)},
        "results_sha256": hashlib.sha256(results_path.read_bytes()).hexdigest(),
        "figures": [str(Path(p).relative_to(out_dir)) for p in figures],
    }
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    if verbose:
        print(f"✅ Results written to {results_path}")
    return rows
