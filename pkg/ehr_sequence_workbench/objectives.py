# ============================================================================
# TRAINING OBJECTIVES MODULE
# ============================================================================
# Pre-training losses (masked-token and next-token prediction) and the
# binary classification objective used during fine-tuning

import numpy as np

from .build_sequence_model import rightmost_states
from .tensor import cross_entropy, getitem, mean, no_grad, softplus
from .vocabulary import FIRST_CONCEPT_TYPE, MASK_ID, N_SPECIALS

MASK_PROB = 0.15
# corruption split of selected positions: [MASK], random concept, unchanged
MASK_REPLACE, RANDOM_REPLACE = 0.8, 0.1


# ============================================================================
# MASKED LANGUAGE MODEL
# ============================================================================
def corrupt_for_mlm(batch, vocab_size, mask_prob, rng):
    """
    Selects concept positions and corrupts them 80/10/10.

    Returns (corrupted concept ids [B, L], selected bool [B, L]).
    """
    maskable = batch["mask"] & (batch["type"] >= FIRST_CONCEPT_TYPE)
    if mask_prob <= 0.0 or not maskable.any():
        raise ValueError("zero maskable tokens in batch")
    selected = maskable & (rng.random(maskable.shape) < mask_prob)
    if not selected.any():
        candidates = np.argwhere(maskable)
        b, t = candidates[rng.integers(len(candidates))]
        selected[b, t] = True
    corrupted = batch["concept"].copy()
    roll = rng.random(selected.shape)
    corrupted[selected & (roll < MASK_REPLACE)] = MASK_ID
    random_slots = selected & (roll >= MASK_REPLACE) & (roll < MASK_REPLACE + RANDOM_REPLACE)
    corrupted[random_slots] = rng.integers(N_SPECIALS, vocab_size, size=int(random_slots.sum()))
    return corrupted, selected


def masked_token_loss(model, batch, corrupted, selected, training=False, rng=None):
    hidden = model.forward(dict(batch, concept=corrupted), training=training, rng=rng)
    b_idx, t_idx = np.nonzero(selected)
    logits = model.vocab_logits(getitem(hidden, (b_idx, t_idx)))
    return cross_entropy(logits, batch["concept"][b_idx, t_idx])


def mlm_loss(model, batch, mask_prob=MASK_PROB, rng=None, training=False):
    """Mean cross-entropy over corrupted concept positions."""
    if model.cfg.objective != "MLM":
        raise ValueError(f"{model.cfg.family} is not trained with MLM")
    rng = rng if rng is not None else np.random.default_rng()
    corrupted, selected = corrupt_for_mlm(batch, model.cfg.vocab_size, mask_prob, rng)
    return masked_token_loss(model, batch, corrupted, selected, training, rng)


# ============================================================================
# NEXT-TOKEN PREDICTION
# ============================================================================
def ntp_loss(model, batch, training=False, rng=None):
    """Shifted cross-entropy: position t predicts the token at t + 1 over non-PAD targets."""
    if model.cfg.objective != "NTP":
        raise ValueError(f"{model.cfg.family} is not trained with NTP")
    L = batch["concept"].shape[1]
    if L < 2:
        raise ValueError(f"next-token prediction needs sequence length >= 2, got {L}")
    valid = batch["mask"][:, 1:]
    if not valid.any():
        raise ValueError("no next-token targets in batch")
    hidden = model.forward(batch, training=training, rng=rng)
    b_idx, t_idx = np.nonzero(valid)
    logits = model.vocab_logits(getitem(hidden, (b_idx, t_idx)))
    return cross_entropy(logits, batch["concept"][b_idx, t_idx + 1])


def pretraining_loss(model, batch, rng=None, training=False, mask_prob=MASK_PROB):
    if model.cfg.objective == "MLM":
        return mlm_loss(model, batch, mask_prob=mask_prob, rng=rng, training=training)
    return ntp_loss(model, batch, training=training, rng=rng)


# ============================================================================
# CLASSIFICATION
# ============================================================================
def classification_logits(model, head, batch, training=False, rng=None):
    hidden = model.forward(batch, training=training, rng=rng)
    return head(rightmost_states(hidden, batch["mask"]))


def bce(logits, labels):
    # mean of softplus(z) - y z, the stable form of binary cross-entropy
    y = np.asarray(labels, dtype=np.float64)
    return mean(softplus(logits) - logits * y)


def classify(model, head, batch):
    """Probabilities sigmoid(head(rightmost non-PAD state)) without recording a graph."""
    with no_grad():
        z = classification_logits(model, head, batch).data
    return 0.5 * (1.0 + np.tanh(0.5 * z))
