# ============================================================================
# TRAINER MODULE
# ============================================================================
# Pre-training (MLM / NTP) and fine-tuning (binary cross-entropy) loops with
# AdamW, early stopping on a validation criterion and per-epoch loss curves

from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

from .metrics import auprc
from .objectives import MASK_PROB, bce, classification_logits, classify, pretraining_loss
from .optimization import AdamW
from .sequence_builder import iterate_batches
from .tensor import no_grad

TRAIN_STREAM, VAL_STREAM = 11, 12


@dataclass
class TrainConfig:
    pretrain_epochs: int = 30
    pretrain_patience: int = 5
    finetune_epochs: int = 10
    finetune_patience: int = 2
    lr: float = 5e-5
    batch_size: int = 32
    dropout: float = 0.1
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    mask_prob: float = MASK_PROB
    seed: int = 0
    freeze_backbone: bool = False
    freeze_head: bool = False
    verbose: bool = False

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.pretrain_patience >= self.pretrain_epochs and self.pretrain_epochs > 0:
            raise ValueError("pretrain_patience must be smaller than pretrain_epochs")
        if self.finetune_patience >= self.finetune_epochs and self.finetune_epochs > 0:
            raise ValueError("finetune_patience must be smaller than finetune_epochs")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")

    def to_dict(self):
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# ============================================================================
# EARLY STOPPING
# ============================================================================
class EarlyStopping:
    """
    Tracks the best validation value and the state that produced it.

    Stops once ``patience`` consecutive epochs fail to improve on the best.
    """

    def __init__(self, patience, mode="min"):
        if mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {mode}")
        self.patience = patience
        self.mode = mode
        self.best = None
        self.best_epoch = None
        self.best_state = None
        self.bad_epochs = 0

    def improved(self, value):
        if self.best is None:
            return True
        return value < self.best if self.mode == "min" else value > self.best

    def update(self, epoch, value, state=None):
        # Returns True when training should stop
        if self.improved(value):
            self.best, self.best_epoch, self.best_state = value, epoch, state
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    best_epoch: int
    best_value: float
    epochs_run: int
    curve: list = field(default_factory=list)


def _seed_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


# ============================================================================
# PRE-TRAINING
# ============================================================================
def evaluate_pretraining_loss(model, seqs, cfg):
    # Fixed masking seed so validation losses are comparable across epochs
    rng = _seed_rng(cfg.seed, VAL_STREAM)
    total, count = 0.0, 0
    with no_grad():
        for batch in iterate_batches(seqs, cfg.batch_size):
            loss = pretraining_loss(model, batch, rng=rng, training=False, mask_prob=cfg.mask_prob)
            total += loss.item() * len(batch["label"])
            count += len(batch["label"])
    return total / count


def pretrain(model, train_seqs, val_seqs, cfg):
    """
    Trains the backbone with its pre-training objective.

    The model is left holding the best-validation-loss weights.
    """
    if not train_seqs:
        raise ValueError("pre-training needs a non-empty training set")
    if not val_seqs:
        raise ValueError("pre-training needs a non-empty validation set")
    rng = _seed_rng(cfg.seed, TRAIN_STREAM)
    optimizer = AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    stopper = EarlyStopping(cfg.pretrain_patience, mode="min")
    curve = []
    epoch = 0
    for epoch in range(1, cfg.pretrain_epochs + 1):
        total, count = 0.0, 0
        batches = iterate_batches(train_seqs, cfg.batch_size, rng)
        for batch in tqdm(batches, desc=f"pretrain {epoch}", leave=False, disable=not cfg.verbose):
            optimizer.zero_grad()
            loss = pretraining_loss(model, batch, rng=rng, training=True, mask_prob=cfg.mask_prob)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch["label"])
            count += len(batch["label"])
        train_loss = total / count
        val_loss = evaluate_pretraining_loss(model, val_seqs, cfg)
        curve.append({"stage": "pretrain", "epoch": epoch, "split": "train", "metric": "loss", "value": train_loss})
        curve.append({"stage": "pretrain", "epoch": epoch, "split": "val", "metric": "loss", "value": val_loss})
        if cfg.verbose:
            print(f"   📉 pretrain epoch {epoch}/{cfg.pretrain_epochs}: train {train_loss:.4f}, val {val_loss:.4f}")
        if stopper.update(epoch, val_loss, model.state_dict() if stopper.improved(val_loss) else None):
            break
    if stopper.best_state is not None:
        model.load_state_dict(stopper.best_state)
    return TrainResult(best_epoch=stopper.best_epoch or 0, best_value=stopper.best, epochs_run=epoch, curve=curve)


# ============================================================================
# FINE-TUNING
# ============================================================================
def predict(model, head, seqs, batch_size=32):
    return np.concatenate([classify(model, head, batch) for batch in iterate_batches(seqs, batch_size)])


def finetune(model, head, train_seqs, val_seqs, cfg):
    """
    Trains backbone and classification head with binary cross-entropy.

    Early stopping maximizes validation AUPRC; the best weights are restored.
    """
    labels = np.array([s.label for s in train_seqs])
    if len(labels) == 0 or labels.min() == labels.max():
        raise ValueError("fine-tuning needs both classes in the training split")
    val_labels = np.array([s.label for s in val_seqs])
    if len(val_labels) == 0 or val_labels.sum() == 0:
        raise ValueError("fine-tuning needs a validation split with positives")

    params = {}
    if not cfg.freeze_backbone:
        params.update({f"model.{n}": p for n, p in model.parameters().items()})
    if not cfg.freeze_head:
        params.update({f"head.{n}": p for n, p in head.parameters().items()})
    optimizer = AdamW(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay) if params else None

    rng = _seed_rng(cfg.seed, TRAIN_STREAM + 100)
    stopper = EarlyStopping(cfg.finetune_patience, mode="max")
    curve = []
    epoch = 0
    for epoch in range(1, cfg.finetune_epochs + 1):
        total, count = 0.0, 0
        batches = iterate_batches(train_seqs, cfg.batch_size, rng)
        for batch in tqdm(batches, desc=f"finetune {epoch}", leave=False, disable=not cfg.verbose):
            model.zero_grad()
            for p in head.parameters().values():
                p.zero_grad()
            logits = classification_logits(model, head, batch, training=True, rng=rng)
            loss = bce(logits, batch["label"])
            if optimizer is not None:
                loss.backward()
                optimizer.step()
            total += loss.item() * len(batch["label"])
            count += len(batch["label"])
        val_auprc = auprc(val_labels, predict(model, head, val_seqs, cfg.batch_size))
        curve.append({"stage": "finetune", "epoch": epoch, "split": "train", "metric": "bce", "value": total / count})
        curve.append({"stage": "finetune", "epoch": epoch, "split": "val", "metric": "auprc", "value": val_auprc})
        if cfg.verbose:
            print(f"   🎯 finetune epoch {epoch}/{cfg.finetune_epochs}: bce {total / count:.4f}, val AUPRC {val_auprc:.4f}")
        state = None
        if stopper.improved(val_auprc):
            state = (model.state_dict(), {n: p.data.copy() for n, p in head.parameters().items()})
        if stopper.update(epoch, val_auprc, state):
            break
    if stopper.best_state is not None:
        model_state, head_state = stopper.best_state
        model.load_state_dict(model_state)
        for name, value in head_state.items():
            head.parameters()[name].data = value
    return TrainResult(best_epoch=stopper.best_epoch or 0, best_value=stopper.best, epochs_run=epoch, curve=curve)
