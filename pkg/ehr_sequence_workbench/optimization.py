# ============================================================================
# OPTIMIZATION MODULE
# ============================================================================
# AdamW with bias-corrected moments and decoupled weight decay
# Decay touches weight matrices only; biases, norm gains and the SSM
# dynamics parameters (A_log, D, dt bias) are left undecayed

import numpy as np

from .tensor import stack_grads

NO_DECAY_LEAVES = ("A_log", "D", "dt_bias", "dt_proj_b")


def decays(name, array):
    leaf = name.rsplit(".", 1)[-1]
    return np.ndim(array) >= 2 and leaf not in NO_DECAY_LEAVES


def init_state(params):
    return {
        "step": 0,
        "m": {name: np.zeros_like(p) for name, p in params.items()},
        "v": {name: np.zeros_like(p) for name, p in params.items()},
    }


def check_finite(grads):
    # Aborts with every offending parameter and its non-finite entry count
    bad = {name: int((~np.isfinite(g)).sum()) for name, g in grads.items() if not np.all(np.isfinite(g))}
    if bad:
        details = ", ".join(f"{name} ({count} non-finite)" for name, count in sorted(bad.items()))
        raise FloatingPointError(f"Non-finite gradients: {details}")


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01, decay_mask=None):
    """
    One AdamW update.

    Args:
        params: name -> array
        grads: name -> array of the same shape
        state: dict from init_state, updated in place
        decay_mask: name -> bool; defaults to decays(name, array)

    Returns:
        name -> updated array (inputs are not modified)
    """
    if set(params) != set(grads):
        raise ValueError("params and grads must have the same names")
    for name in params:
        if np.shape(params[name]) != np.shape(grads[name]):
            raise ValueError(f"Gradient shape {np.shape(grads[name])} does not match {name} {np.shape(params[name])}")
    check_finite(grads)

    beta1, beta2 = betas
    state["step"] += 1
    t = state["step"]
    updated = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = beta2 * state["v"][name] + (1.0 - beta2) * g * g
        state["m"][name], state["v"][name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        decay = decay_mask[name] if decay_mask is not None else decays(name, p)
        new = np.asarray(p, dtype=np.float64)
        if decay and weight_decay:
            new = new - lr * weight_decay * new
        updated[name] = new - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


class AdamW:
    """Owns the moment state of a set of named trainable tensors."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = init_state({name: p.data for name, p in params.items()})

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        grads = stack_grads(self.params)
        updated = adamw_step(
            {name: p.data for name, p in self.params.items()}, grads, self.state,
            lr=self.lr, betas=self.betas, eps=self.eps, weight_decay=self.weight_decay,
        )
        for name, value in updated.items():
            self.params[name].data = value
