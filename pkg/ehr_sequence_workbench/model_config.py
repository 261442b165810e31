# ============================================================================
# MODEL CONFIGURATION MODULE
# ============================================================================
# Describes the five architecture families and their Tiny/Small/Medium/DeskTiny
# sizes, enumerates the trainable parameter shapes of a configuration and
# evaluates the symbolic closed-form parameter count used as a cross-check

import math
from dataclasses import asdict, dataclass, field

import sympy as sp

from .vocabulary import STREAM_TABLE_SIZES

# ============================================================================
# DESIGN-CHOICE ENUMERATIONS
# ============================================================================
MIXERS = ("Attention-bidirectional", "Attention-causal", "SSM-selective", "SSM-scalarA")
OBJECTIVES = ("MLM", "NTP")
POSITIONS = ("Absolute", "RoPE", "None")
NORMS = ("LayerNorm-post", "LayerNorm-pre", "RMSNorm-pre")
ACTIVATION_NAMES = ("GeLU", "GeGLU", "SwiGLU", "SiLU")

# family -> design matrix row
FAMILIES = {
    "BERT": dict(mixer="Attention-bidirectional", objective="MLM", pos="Absolute",
                 norm="LayerNorm-post", act="GeLU", tie_embeddings=True),
    "MBERT_lite": dict(mixer="Attention-bidirectional", objective="MLM", pos="RoPE",
                       norm="LayerNorm-pre", act="GeGLU", tie_embeddings=True),
    "LLAMA": dict(mixer="Attention-causal", objective="NTP", pos="RoPE",
                  norm="RMSNorm-pre", act="SwiGLU", tie_embeddings=False),
    "MAMBA": dict(mixer="SSM-selective", objective="NTP", pos="None",
                  norm="RMSNorm-pre", act="SiLU", tie_embeddings=True),
    "MAMBA2": dict(mixer="SSM-scalarA", objective="NTP", pos="None",
                   norm="RMSNorm-pre", act="SiLU", tie_embeddings=False),
}

# size -> (d_m, n_m, n_h, n_b, d_f, d_p); Tiny transformers use two layers
SIZES = {
    "Tiny": dict(d_m=256, n_m=2, n_h=4, n_b=2, d_f=512, d_p=32),
    "Small": dict(d_m=512, n_m=4, n_h=4, n_b=6, d_f=1024, d_p=64),
    "Medium": dict(d_m=512, n_m=6, n_h=8, n_b=12, d_f=2048, d_p=64),
    "DeskTiny": dict(d_m=64, n_m=2, n_h=2, n_b=2, d_f=128, d_p=32),
}

# Reference parameter counts (millions) at vocabulary 4470
REFERENCE_PARAMETER_COUNTS = {
    "BERT": (2.4, 11.2, 21.7),
    "MBERT_lite": (2.5, 13.1, 27.7),
    "LLAMA": (3.6, 15.1, 29.8),
    "MAMBA": (2.0, 12.5, 22.6),
    "MAMBA2": (3.2, 14.9, 25.2),
}


# ============================================================================
# MODEL CONFIG
# ============================================================================
@dataclass
class ModelConfig:
    """
    Hyperparameters of one sequence model.

    Attention families use ``n_m`` layers of ``n_h`` heads; SSM families use
    ``n_b`` blocks with inner width ``expand * d_m``. ``d_p`` is the SSM head
    dimension of the scalar-A mixer.
    """

    family: str
    size: str
    mixer: str
    objective: str
    pos: str
    norm: str
    act: str
    d_m: int
    d_f: int
    n_m: int
    n_h: int
    n_b: int
    C: int
    vocab_size: int
    n_state: int = 16
    d_conv: int = 4
    expand: int = 2
    d_p: int = 32
    dropout: float = 0.1
    tie_embeddings: bool = False
    rope_base: float = 10000.0
    stream_sizes: dict = field(default_factory=lambda: dict(STREAM_TABLE_SIZES))

    def __post_init__(self):
        for value, allowed, label in (
            (self.mixer, MIXERS, "mixer"),
            (self.objective, OBJECTIVES, "objective"),
            (self.pos, POSITIONS, "pos"),
            (self.norm, NORMS, "norm"),
            (self.act, ACTIVATION_NAMES, "act"),
        ):
            if value not in allowed:
                raise ValueError(f"Unknown {label} '{value}', expected one of {allowed}")
        if self.is_ssm and self.objective != "NTP":
            raise ValueError(f"{self.mixer} mixers are trained with NTP, got {self.objective}")
        if self.mixer == "Attention-bidirectional" and self.objective != "MLM":
            raise ValueError("Bidirectional attention is trained with MLM")
        if self.mixer == "Attention-causal" and self.objective != "NTP":
            raise ValueError("Causal attention is trained with NTP")
        if self.is_ssm and self.pos != "None":
            raise ValueError("SSM mixers carry no position encoding")
        if not self.is_ssm:
            if self.n_h <= 0 or self.d_m % self.n_h:
                raise ValueError(f"d_m={self.d_m} must be divisible by n_h={self.n_h}")
            if self.pos == "RoPE" and (self.d_m // self.n_h) % 2:
                raise ValueError(f"RoPE needs an even head dim, got {self.d_m // self.n_h}")
        if self.mixer == "SSM-scalarA" and self.d_inner % self.d_p:
            raise ValueError(f"inner width {self.d_inner} must be divisible by d_p={self.d_p}")
        if min(self.d_m, self.C, self.vocab_size) <= 0:
            raise ValueError("d_m, C and vocab_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    # ------------------------------------------------------------------
    # Derived dimensions
    # ------------------------------------------------------------------
    @property
    def is_ssm(self):
        return self.mixer.startswith("SSM")

    @property
    def causal(self):
        return self.mixer != "Attention-bidirectional"

    @property
    def n_layers(self):
        return self.n_b if self.is_ssm else self.n_m

    @property
    def d_inner(self):
        return self.expand * self.d_m

    @property
    def dt_rank(self):
        return math.ceil(self.d_m / 16)

    @property
    def n_ssm_heads(self):
        return self.d_inner // self.d_p

    @property
    def gated_ffn(self):
        return self.act in ("GeGLU", "SwiGLU")

    @property
    def attention_bias(self):
        # Only the original encoder carries biases on its projections
        return self.family == "BERT"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def preset(name, size, vocab_size, C, **overrides):
    """
    Builds the ModelConfig of a family at a given size.

    Args:
        name: BERT, MBERT_lite, LLAMA, MAMBA or MAMBA2
        size: Tiny, Small, Medium or DeskTiny
        vocab_size: concept vocabulary size
        C: context length
        overrides: any ModelConfig field (dropout, n_state, ...)
    """
    if name not in FAMILIES:
        raise ValueError(f"Unknown preset '{name}', expected one of {sorted(FAMILIES)}")
    if size not in SIZES:
        raise ValueError(f"Unknown preset size '{size}', expected one of {sorted(SIZES)}")
    fields = dict(family=name, size=size, vocab_size=vocab_size, C=C)
    fields.update(FAMILIES[name])
    fields.update(SIZES[size])
    fields.update(overrides)
    return ModelConfig(**fields)


# ============================================================================
# PARAMETER SHAPES
# ============================================================================
def _norm_shapes(prefix, cfg, d):
    if cfg.norm.startswith("LayerNorm"):
        return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}
    return {f"{prefix}.gain": (d,)}


def _attention_layer_shapes(i, cfg):
    d, f = cfg.d_m, cfg.d_f
    p = f"layers.{i}"
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{p}.attn.w_{proj}"] = (d, d)
        if cfg.attention_bias:
            shapes[f"{p}.attn.b_{proj}"] = (d,)
    shapes.update(_norm_shapes(f"{p}.norm1", cfg, d))
    if cfg.gated_ffn:
        shapes[f"{p}.ffn.w_gate"] = (d, f)
        shapes[f"{p}.ffn.w_value"] = (d, f)
        shapes[f"{p}.ffn.w_out"] = (f, d)
    else:
        shapes[f"{p}.ffn.w_in"] = (d, f)
        shapes[f"{p}.ffn.b_in"] = (f,)
        shapes[f"{p}.ffn.w_out"] = (f, d)
        shapes[f"{p}.ffn.b_out"] = (d,)
    shapes.update(_norm_shapes(f"{p}.norm2", cfg, d))
    return shapes


def _mamba_block_shapes(i, cfg):
    d, e, n, k, r = cfg.d_m, cfg.d_inner, cfg.n_state, cfg.d_conv, cfg.dt_rank
    p = f"layers.{i}"
    return {
        f"{p}.norm.gain": (d,),
        f"{p}.in_proj": (d, 2 * e),
        f"{p}.conv_w": (e, k),
        f"{p}.conv_b": (e,),
        f"{p}.x_proj": (e, r + 2 * n),
        f"{p}.dt_proj_w": (r, e),
        f"{p}.dt_proj_b": (e,),
        f"{p}.A_log": (e, n),
        f"{p}.D": (e,),
        f"{p}.out_proj": (e, d),
    }


def _mamba2_block_shapes(i, cfg):
    d, e, n, k, h = cfg.d_m, cfg.d_inner, cfg.n_state, cfg.d_conv, cfg.n_ssm_heads
    conv_dim = e + 2 * n
    p = f"layers.{i}"
    return {
        f"{p}.norm.gain": (d,),
        f"{p}.in_proj": (d, 2 * e + 2 * n + h),
        f"{p}.conv_w": (conv_dim, k),
        f"{p}.conv_b": (conv_dim,),
        f"{p}.dt_bias": (h,),
        f"{p}.A_log": (h,),
        f"{p}.D": (h,),
        f"{p}.gate_norm.gain": (e,),
        f"{p}.out_proj": (e, d),
    }


def parameter_shapes(cfg):
    """
    Ordered name -> shape map of every trainable tensor of a backbone and
    its pre-training head. The classifier head is counted separately.
    """
    d, V = cfg.d_m, cfg.vocab_size
    shapes = {"embed.concept": (V, d)}
    for stream, rows in cfg.stream_sizes.items():
        shapes[f"embed.{stream}"] = (rows, d)
    if cfg.pos == "Absolute":
        shapes["embed.position"] = (cfg.C, d)
    if cfg.norm.startswith("LayerNorm"):
        shapes.update(_norm_shapes("embed.norm", cfg, d))

    for i in range(cfg.n_layers):
        if cfg.mixer == "SSM-selective":
            shapes.update(_mamba_block_shapes(i, cfg))
        elif cfg.mixer == "SSM-scalarA":
            shapes.update(_mamba2_block_shapes(i, cfg))
        else:
            shapes.update(_attention_layer_shapes(i, cfg))

    if cfg.norm != "LayerNorm-post":
        shapes.update(_norm_shapes("final_norm", cfg, d))

    if cfg.objective == "MLM":
        shapes["head.transform_w"] = (d, d)
        if cfg.attention_bias:
            shapes["head.transform_b"] = (d,)
        shapes["head.norm.gain"] = (d,)
        shapes["head.norm.bias"] = (d,)
        shapes["head.decoder_b"] = (V,)
    if not cfg.tie_embeddings:
        shapes["head.decoder_w"] = (d, V)
    return shapes


def classifier_head_shapes(d_m):
    return {"w1": (d_m, d_m), "b1": (d_m,), "w2": (d_m, 1), "b2": (1,)}


# ============================================================================
# CLOSED-FORM PARAMETER COUNT
# ============================================================================
V, C, d, f, L, S = sp.symbols("V C d f L S", positive=True, integer=True)
N, k, E, R, H = sp.symbols("N k E R H", positive=True, integer=True)


def closed_form_expression(cfg):
    """
    Symbolic parameter count of a configuration family.

    Symbols: V vocab, C context, d model dim, f FFN dim, L layers, S sum of
    auxiliary embedding rows, N state size, k conv width, E inner width,
    R dt rank, H scalar-A heads.
    """
    norm = 2 * d if cfg.norm.startswith("LayerNorm") else d
    embeddings = (V + S) * d + (C * d if cfg.pos == "Absolute" else 0)
    embeddings += norm if cfg.norm.startswith("LayerNorm") else 0

    if cfg.mixer == "SSM-selective":
        layer = d + d * 2 * E + E * k + E + E * (R + 2 * N) + R * E + E + E * N + E + E * d
    elif cfg.mixer == "SSM-scalarA":
        layer = d + d * (2 * E + 2 * N + H) + (E + 2 * N) * (k + 1) + 3 * H + E + E * d
    else:
        attn = 4 * d * d + (4 * d if cfg.attention_bias else 0)
        ffn = 3 * d * f if cfg.gated_ffn else 2 * d * f + f + d
        layer = attn + ffn + 2 * norm

    final = norm if cfg.norm != "LayerNorm-post" else 0
    head = 0
    if cfg.objective == "MLM":
        head += d * d + (d if cfg.attention_bias else 0) + 2 * d + V
    if not cfg.tie_embeddings:
        head += d * V
    return sp.expand(embeddings + L * layer + final + head)


def closed_form_parameter_count(cfg):
    expr = closed_form_expression(cfg)
    values = {
        V: cfg.vocab_size, C: cfg.C, d: cfg.d_m, f: cfg.d_f, L: cfg.n_layers,
        S: sum(cfg.stream_sizes.values()), N: cfg.n_state, k: cfg.d_conv,
        E: cfg.d_inner, R: cfg.dt_rank, H: cfg.n_ssm_heads if cfg.is_ssm else 1,
    }
    return int(expr.subs(values))


def shape_parameter_count(shapes):
    return sum(math.prod(shape) for shape in shapes.values())
