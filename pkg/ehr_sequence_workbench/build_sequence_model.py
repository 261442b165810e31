# ============================================================================
# SEQUENCE MODEL BUILDER MODULE
# ============================================================================
# Builds the weights of a configured sequence model and runs its forward pass:
# summed stream embeddings, a stack of attention layers or SSM blocks, the
# pre-training head (MLM transform or next-token decoder) and the two-layer
# classification head used for fine-tuning. Also stores and restores
# checkpoints as named fp64 arrays with a JSON sidecar

import json
from pathlib import Path

import numpy as np

from .discretization import selective_scan
from .functional import (
    ACTIVATIONS, GATED_ACTIVATIONS, causal_depthwise_conv, gelu, layer_norm, linear,
    multi_head_attention, rms_norm, silu,
)
from .model_config import ModelConfig, classifier_head_shapes, parameter_shapes
from .tensor import (
    dropout, exp, getitem, matmul, parameter, reshape, softplus, split_last,
    swap_last, take_rows,
)

CHECKPOINT_FORMAT_VERSION = 1
INIT_STD = 0.02
DT_MIN, DT_MAX = 1e-3, 1e-1


# ============================================================================
# INITIALIZATION
# ============================================================================
def _inverse_softplus(y):
    return y + np.log(-np.expm1(-y))


def _initial_value(name, shape, cfg, rng):
    # Per-role initial values keyed on the trailing parameter name
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gain":
        return np.ones(shape)
    if leaf in ("bias", "decoder_b", "transform_b") or leaf.startswith("b_"):
        return np.zeros(shape)
    if leaf == "A_log":
        if cfg.mixer == "SSM-scalarA":
            return np.log(rng.uniform(1.0, 16.0, size=shape))
        return np.tile(np.log(np.arange(1, cfg.n_state + 1, dtype=np.float64)), (shape[0], 1))
    if leaf == "D":
        return np.ones(shape)
    if leaf in ("dt_proj_b", "dt_bias"):
        dt = np.exp(rng.uniform(np.log(DT_MIN), np.log(DT_MAX), size=shape))
        return _inverse_softplus(dt)
    if leaf == "dt_proj_w":
        bound = cfg.dt_rank ** -0.5
        return rng.uniform(-bound, bound, size=shape)
    if leaf in ("conv_w", "conv_b"):
        bound = cfg.d_conv ** -0.5
        return rng.uniform(-bound, bound, size=shape)
    return rng.normal(0.0, INIT_STD, size=shape)


def build_model(cfg, seed=0):
    """
    Creates a SequenceModel with freshly initialized weights.

    Initialization is a pure function of (cfg, seed).
    """
    rng = np.random.default_rng(seed)
    params = {
        name: parameter(_initial_value(name, shape, cfg, rng), name=name)
        for name, shape in parameter_shapes(cfg).items()
    }
    return SequenceModel(cfg, params)


def build_classifier_head(d_m, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in classifier_head_shapes(d_m).items():
        if zero or name.startswith("b"):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, INIT_STD, size=shape)
        params[name] = parameter(value, name=f"classifier.{name}")
    return ClassifierHead(params)


# ============================================================================
# SEQUENCE MODEL
# ============================================================================
class SequenceModel:
    """
    Backbone plus pre-training head of one configuration.

    ``forward`` maps a collated batch (dict of [B, L] integer streams plus
    ``mask``) to hidden states [B, L, d_m].
    """

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------
    def parameters(self):
        return self.params

    def count_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValueError(f"State does not match model parameters: {sorted(missing)[:5]}")
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise ValueError(f"Shape mismatch for {name}: {value.shape} vs {self.params[name].shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------
    def embed(self, batch, training=False, rng=None):
        P, cfg = self.params, self.cfg
        h = take_rows(P["embed.concept"], batch["concept"])
        for stream in cfg.stream_sizes:
            h = h + take_rows(P[f"embed.{stream}"], batch[stream])
        if cfg.pos == "Absolute":
            h = h + take_rows(P["embed.position"], batch["position"])
        if cfg.norm.startswith("LayerNorm"):
            h = layer_norm(h, P["embed.norm.gain"], P["embed.norm.bias"])
        return self._drop(h, training, rng)

    def forward(self, batch, training=False, rng=None):
        h = self.embed(batch, training, rng)
        for i in range(self.cfg.n_layers):
            h = self.layer(i, h, batch["mask"], training, rng)
        if self.cfg.norm != "LayerNorm-post":
            h = self._norm("final_norm", h)
        return h

    __call__ = forward

    def layer(self, i, h, mask, training=False, rng=None):
        if self.cfg.mixer == "SSM-selective":
            return h + self._drop(self._mamba_block(i, self._norm(f"layers.{i}.norm", h)), training, rng)
        if self.cfg.mixer == "SSM-scalarA":
            return h + self._drop(self._mamba2_block(i, self._norm(f"layers.{i}.norm", h)), training, rng)
        return self._attention_layer(i, h, mask, training, rng)

    def _drop(self, x, training, rng):
        if not training or self.cfg.dropout <= 0.0:
            return x
        if rng is None:
            raise ValueError("training forward with dropout needs an rng")
        return dropout(x, self.cfg.dropout, rng, training=True)

    def _norm(self, prefix, x):
        P = self.params
        if self.cfg.norm.startswith("LayerNorm"):
            return layer_norm(x, P[f"{prefix}.gain"], P[f"{prefix}.bias"])
        return rms_norm(x, P[f"{prefix}.gain"])

    # ------------------------------------------------------------------
    # Attention layers
    # ------------------------------------------------------------------
    def _attention(self, i, x, mask, return_logits=False):
        P, cfg = self.params, self.cfg
        p = f"layers.{i}.attn"
        biases = None
        if cfg.attention_bias:
            biases = tuple(P[f"{p}.b_{n}"] for n in ("q", "k", "v", "o"))
        return multi_head_attention(
            x, P[f"{p}.w_q"], P[f"{p}.w_k"], P[f"{p}.w_v"], P[f"{p}.w_o"], cfg.n_h,
            causal=cfg.causal, key_mask=mask,
            rope_base=cfg.rope_base if cfg.pos == "RoPE" else None,
            biases=biases, return_logits=return_logits,
        )

    def _ffn(self, i, x):
        P, cfg = self.params, self.cfg
        p = f"layers.{i}.ffn"
        if cfg.gated_ffn:
            hidden = GATED_ACTIVATIONS[cfg.act](x, P[f"{p}.w_gate"], P[f"{p}.w_value"])
            return matmul(hidden, P[f"{p}.w_out"])
        hidden = ACTIVATIONS[cfg.act](linear(x, P[f"{p}.w_in"], P[f"{p}.b_in"]))
        return linear(hidden, P[f"{p}.w_out"], P[f"{p}.b_out"])

    def _attention_layer(self, i, h, mask, training, rng):
        p = f"layers.{i}"
        if self.cfg.norm == "LayerNorm-post":
            h = self._norm(f"{p}.norm1", h + self._drop(self._attention(i, h, mask), training, rng))
            return self._norm(f"{p}.norm2", h + self._drop(self._ffn(i, h), training, rng))
        h = h + self._drop(self._attention(i, self._norm(f"{p}.norm1", h), mask), training, rng)
        return h + self._drop(self._ffn(i, self._norm(f"{p}.norm2", h)), training, rng)

    def attention_logits(self, batch, layer=0):
        # Pre-softmax logits [B, n_h, L, L] of one attention layer
        if self.cfg.is_ssm:
            raise ValueError(f"{self.cfg.family} has no attention layers")
        h = self.embed(batch)
        for i in range(layer):
            h = self.layer(i, h, batch["mask"])
        x = h if self.cfg.norm == "LayerNorm-post" else self._norm(f"layers.{layer}.norm1", h)
        return self._attention(layer, x, batch["mask"], return_logits=True)[1]

    # ------------------------------------------------------------------
    # SSM blocks
    # ------------------------------------------------------------------
    def _ssm_inputs(self, i, x):
        # Projections shared by the block forward and selective_params
        P, cfg = self.params, self.cfg
        p = f"layers.{i}"
        e, n = cfg.d_inner, cfg.n_state
        xz = matmul(x, P[f"{p}.in_proj"])
        if cfg.mixer == "SSM-selective":
            u, z = split_last(xz, [e, e])
            u = silu(causal_depthwise_conv(u, P[f"{p}.conv_w"], P[f"{p}.conv_b"]))
            dt_low, B, C = split_last(matmul(u, P[f"{p}.x_proj"]), [cfg.dt_rank, n, n])
            delta = softplus(matmul(dt_low, P[f"{p}.dt_proj_w"]) + P[f"{p}.dt_proj_b"])
            return dict(u=u, z=z, delta=delta, B=B, C=C)
        z, xbc, dt = split_last(xz, [e, e + 2 * n, cfg.n_ssm_heads])
        xbc = silu(causal_depthwise_conv(xbc, P[f"{p}.conv_w"], P[f"{p}.conv_b"]))
        u, B, C = split_last(xbc, [e, n, n])
        delta = softplus(dt + P[f"{p}.dt_bias"])
        return dict(u=u, z=z, delta=delta, B=B, C=C)

    def selective_params(self, i, x):
        """
        Per-token (delta, B, C) of SSM block ``i`` for its normalized input x.

        delta has one column per inner channel for the selective mixer and one
        per SSM head for the scalar-A mixer.
        """
        if not self.cfg.is_ssm:
            raise ValueError(f"{self.cfg.family} has no SSM blocks")
        s = self._ssm_inputs(i, x)
        return s["delta"], s["B"], s["C"]

    def _mamba_block(self, i, x):
        P = self.params
        p = f"layers.{i}"
        s = self._ssm_inputs(i, x)
        A = -exp(P[f"{p}.A_log"])
        y = selective_scan(s["u"], s["delta"], A, s["B"], s["C"]) + s["u"] * P[f"{p}.D"]
        return matmul(y * silu(s["z"]), P[f"{p}.out_proj"])

    def _mamba2_block(self, i, x):
        P, cfg = self.params, self.cfg
        p = f"layers.{i}"
        s = self._ssm_inputs(i, x)
        head_of = np.arange(cfg.d_inner) // cfg.d_p
        # one A, dt and D per head, shared by the head's d_p channels
        delta = getitem(s["delta"], (Ellipsis, head_of))
        A = reshape(getitem(-exp(P[f"{p}.A_log"]), head_of), (cfg.d_inner, 1)) * np.ones((1, cfg.n_state))
        D = getitem(P[f"{p}.D"], head_of)
        y = selective_scan(s["u"], delta, A, s["B"], s["C"]) + s["u"] * D
        y = rms_norm(y * silu(s["z"]), P[f"{p}.gate_norm.gain"])
        return matmul(y, P[f"{p}.out_proj"])

    # ------------------------------------------------------------------
    # Pre-training head
    # ------------------------------------------------------------------
    def decoder_weight(self):
        if self.cfg.tie_embeddings:
            return swap_last(self.params["embed.concept"])
        return self.params["head.decoder_w"]

    def vocab_logits(self, hidden):
        """Concept-vocabulary logits for hidden rows [..., d_m]."""
        P = self.params
        if self.cfg.objective == "MLM":
            t = gelu(linear(hidden, P["head.transform_w"], P.get("head.transform_b")))
            t = layer_norm(t, P["head.norm.gain"], P["head.norm.bias"])
            return matmul(t, self.decoder_weight()) + P["head.decoder_b"]
        return matmul(hidden, self.decoder_weight())


# ============================================================================
# CLASSIFICATION HEAD
# ============================================================================
def rightmost_indices(mask):
    mask = np.asarray(mask, dtype=bool)
    lengths = mask.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("classification over an all-PAD sequence")
    # right padding: the last real token sits at length - 1
    return lengths - 1


def rightmost_states(hidden, mask):
    idx = rightmost_indices(mask)
    return getitem(hidden, (np.arange(hidden.shape[0]), idx))


class ClassifierHead:
    """Two dense layers with GeLU between, producing one logit per sequence."""

    def __init__(self, params):
        self.params = params

    def parameters(self):
        return self.params

    def count_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def __call__(self, states):
        P = self.params
        hidden = gelu(linear(states, P["w1"], P["b1"]))
        return reshape(linear(hidden, P["w2"], P["b2"]), (states.shape[0],))


# ============================================================================
# CHECKPOINTS
# ============================================================================
def save_checkpoint(path, model, head=None, metadata=None):
    """
    Writes ``<path>.npz`` (named fp64 arrays) and ``<path>.json`` (config sidecar).

    Returns the two paths.
    """
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"model/{n}": v for n, v in model.state_dict().items()}
    if head is not None:
        arrays.update({f"head/{n}": p.data for n, p in head.parameters().items()})
    npz_path = base.with_suffix(".npz")
    with open(npz_path, "wb") as fh:
        np.savez(fh, **arrays)
    sidecar = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "has_head": head is not None,
        "metadata": metadata or {},
    }
    json_path = base.with_suffix(".json")
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return npz_path, json_path


def load_checkpoint(path):
    """Reads a checkpoint written by save_checkpoint: (model, head or None, metadata)."""
    base = Path(path)
    json_path, npz_path = base.with_suffix(".json"), base.with_suffix(".npz")
    if not json_path.exists() or not npz_path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {base}")
    sidecar = json.loads(json_path.read_text())
    version = sidecar.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"Unsupported checkpoint format version {version}")
    cfg = ModelConfig.from_dict(sidecar["config"])
    with np.load(npz_path) as archive:
        arrays = {k: archive[k] for k in archive.files}
    model = SequenceModel(cfg, {
        name[len("model/"):]: parameter(v, name=name[len("model/"):])
        for name, v in arrays.items() if name.startswith("model/")
    })
    head = None
    if sidecar["has_head"]:
        head = ClassifierHead({
            name[len("head/"):]: parameter(v, name=f"classifier.{name[len('head/'):]}")
            for name, v in arrays.items() if name.startswith("head/")
        })
    return model, head, sidecar["metadata"]
