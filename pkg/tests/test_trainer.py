import numpy as np
import pytest

from ehr_sequence_workbench.build_sequence_model import build_classifier_head, build_model
from ehr_sequence_workbench.metrics import auprc
from ehr_sequence_workbench.model_config import preset
from ehr_sequence_workbench.trainer import EarlyStopping, TrainConfig, finetune, predict, pretrain


def _split(seqs):
    positives = [s for s in seqs if s.label == 1]
    negatives = [s for s in seqs if s.label == 0]
    val = positives[:3] + negatives[:3]
    return positives[3:] + negatives[3:], val


def test_early_stopping_waits_for_patience():
    stopper = EarlyStopping(patience=2, mode="min")
    assert not stopper.update(1, 1.0, state="a")
    assert not stopper.update(2, 0.8, state="b")
    assert not stopper.update(3, 0.9)
    assert stopper.update(4, 0.8)
    assert (stopper.best, stopper.best_epoch, stopper.best_state) == (0.8, 2, "b")


def test_early_stopping_maximizes():
    stopper = EarlyStopping(patience=1, mode="max")
    stopper.update(1, 0.3)
    assert not stopper.update(2, 0.4)
    assert stopper.update(3, 0.4)
    with pytest.raises(ValueError, match="mode"):
        EarlyStopping(1, mode="median")


def test_train_config_validation():
    with pytest.raises(ValueError, match="pretrain_patience"):
        TrainConfig(pretrain_epochs=3, pretrain_patience=3)
    with pytest.raises(ValueError, match="finetune_patience"):
        TrainConfig(finetune_epochs=2, finetune_patience=2)
    with pytest.raises(ValueError, match="learning rate"):
        TrainConfig(lr=0.0)
    cfg = TrainConfig(betas=[0.8, 0.9])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("family", ["BERT", "MAMBA"])
def test_pretraining_lowers_validation_loss(family, small_sequences, small_vocab):
    train, val = _split(small_sequences)
    model = build_model(preset(family, "DeskTiny", len(small_vocab), 32, dropout=0.0), seed=0)
    cfg = TrainConfig(pretrain_epochs=3, pretrain_patience=2, lr=3e-3, batch_size=8)
    result = pretrain(model, train, val, cfg)
    val_losses = [row["value"] for row in result.curve if row["split"] == "val"]
    assert len(val_losses) == result.epochs_run
    assert result.best_value == min(val_losses)
    assert result.best_epoch == 1 + val_losses.index(result.best_value)
    assert all(np.isfinite(val_losses))


def test_finetune_restores_best_weights(small_sequences, small_vocab):
    train, val = _split(small_sequences)
    model = build_model(preset("LLAMA", "DeskTiny", len(small_vocab), 32, dropout=0.0), seed=0)
    head = build_classifier_head(model.cfg.d_m, seed=0)
    cfg = TrainConfig(finetune_epochs=3, finetune_patience=1, lr=1e-3, batch_size=8)
    result = finetune(model, head, train, val, cfg)
    assert 1 <= result.best_epoch <= result.epochs_run
    probs = predict(model, head, val)
    assert probs.shape == (len(val),)
    assert auprc([s.label for s in val], probs) == pytest.approx(result.best_value)


def test_fully_frozen_run_keeps_constant_predictions(small_sequences, small_vocab):
    train, val = _split(small_sequences)
    model = build_model(preset("MAMBA2", "DeskTiny", len(small_vocab), 32, dropout=0.0), seed=0)
    head = build_classifier_head(model.cfg.d_m, seed=0, zero=True)
    before = model.state_dict()
    cfg = TrainConfig(finetune_epochs=3, finetune_patience=1, freeze_backbone=True, freeze_head=True)
    result = finetune(model, head, train, val, cfg)
    np.testing.assert_array_equal(predict(model, head, val), 0.5)
    assert result.epochs_run == 2
    assert all(np.array_equal(before[n], v) for n, v in model.state_dict().items())


def test_finetune_needs_both_classes(small_sequences, small_vocab):
    train, val = _split(small_sequences)
    model = build_model(preset("LLAMA", "DeskTiny", len(small_vocab), 32), seed=0)
    head = build_classifier_head(model.cfg.d_m)
    negatives = [s for s in train if s.label == 0]
    with pytest.raises(ValueError, match="both classes"):
        finetune(model, head, negatives, val, TrainConfig())
    with pytest.raises(ValueError, match="non-empty training set"):
        pretrain(model, [], val, TrainConfig())
