# ============================================================================
# FUNCTIONAL LAYERS MODULE
# ============================================================================
# Stateless building blocks shared by every model configuration:
# activations (GeLU, SiLU, GeGLU, SwiGLU), LayerNorm / RMSNorm, rotary
# position encoding, scaled dot-product and multi-head attention, and the
# depthwise causal convolution used inside the SSM blocks

import numpy as np

from .tensor import (
    Tensor, as_tensor, make_result, matmul, masked_fill, mean, softmax_rows,
    swap_last, reshape, transpose, concat, getitem,
)

NORM_EPS = 1e-5
GELU_C = np.sqrt(2.0 / np.pi)

# ============================================================================
# ACTIVATIONS
# ============================================================================
def gelu(x):
    # tanh approximation
    x = as_tensor(x)
    u = GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = GELU_C * (1.0 + 3.0 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return make_result(out, (x,), backward)


def silu(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-np.clip(x.data, -700.0, 700.0)))
    out = x.data * s

    def backward(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return make_result(out, (x,), backward)


def geglu(x, w_gate, w_value):
    # Gated GeLU unit: gelu(x W) * (x V)
    return gelu(matmul(x, w_gate)) * matmul(x, w_value)


def swiglu(x, w_gate, w_value):
    # Gated SiLU unit: silu(x W) * (x V)
    return silu(matmul(x, w_gate)) * matmul(x, w_value)


ACTIVATIONS = {"GeLU": gelu, "SiLU": silu}
GATED_ACTIVATIONS = {"GeGLU": geglu, "SwiGLU": swiglu}


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else out + bias


# ============================================================================
# NORMALIZATION
# ============================================================================
def layer_norm(x, gain, bias, eps=NORM_EPS):
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gain + bias


def rms_norm(x, gain, eps=NORM_EPS):
    ms = mean(x * x, axis=-1, keepdims=True)
    return x * (ms + eps) ** -0.5 * gain


# ============================================================================
# ROTARY POSITION ENCODING
# ============================================================================
def rope_angles(positions, d, base=10000.0):
    # theta[m, j] = m * base^(-2j/d) for pair j of position m
    freqs = base ** (-2.0 * np.arange(d // 2) / d)
    return np.outer(np.asarray(positions, dtype=np.float64), freqs)


def rope_rotate(x, base=10000.0, positions=None):
    """
    Rotates interleaved feature pairs (2j, 2j+1) of every position.

    Args:
        x: Tensor[..., L, d] with even d
        base: frequency base
        positions: optional length-L position indices (defaults to 0..L-1)
    """
    x = as_tensor(x)
    L, d = x.shape[-2], x.shape[-1]
    if d % 2:
        raise ValueError(f"rope_rotate needs an even feature dim, got {d}")
    if positions is None:
        positions = np.arange(L)
    theta = rope_angles(positions, d, base)
    cos, sin = np.cos(theta), np.sin(theta)
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def backward(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return make_result(out, (x,), backward)


# ============================================================================
# ATTENTION
# ============================================================================
def attention_mask(L, causal=False, key_mask=None):
    # Boolean [..., L, L] matrix of allowed (query, key) pairs
    allowed = np.tril(np.ones((L, L), dtype=bool)) if causal else np.ones((L, L), dtype=bool)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        allowed = allowed & key_mask[..., None, :]
    return allowed


def attention(Q, K, V, d_k=None, causal=False, key_mask=None, return_weights=False):
    """
    Scaled dot-product attention Softmax(Q K^T / sqrt(d_k)) V.

    Disallowed pairs (future keys under ``causal``, PAD keys under
    ``key_mask``) receive -inf logits and therefore exactly zero weight.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    d_k = Q.shape[-1] if d_k is None else d_k
    if d_k == 0:
        raise ValueError("attention needs d_k > 0")
    scores = matmul(Q, swap_last(K)) * (1.0 / np.sqrt(d_k))
    allowed = attention_mask(Q.shape[-2], causal=causal, key_mask=key_mask)
    if causal or key_mask is not None:
        if key_mask is not None and allowed.ndim > 2:
            # broadcast [B, L, L] over the head axis of [B, H, L, L]
            allowed = allowed[:, None, :, :] if scores.ndim == 4 else allowed
        scores = masked_fill(scores, ~allowed, -np.inf)
    weights = softmax_rows(scores)
    out = matmul(weights, V)
    return (out, weights) if return_weights else out


def split_heads(x, n_h):
    # [B, L, d] -> [B, n_h, L, d / n_h]
    B, L, d = x.shape
    return transpose(reshape(x, (B, L, n_h, d // n_h)), (0, 2, 1, 3))


def merge_heads(x):
    # [B, n_h, L, d_h] -> [B, L, n_h * d_h]
    B, H, L, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def multi_head_attention(x, w_q, w_k, w_v, w_o, n_h, causal=False, key_mask=None,
                         rope_base=None, biases=None, return_logits=False):
    """
    Concatenates n_h parallel attention heads and projects with W^O.

    Args:
        x: Tensor[B, L, d_m]
        w_q, w_k, w_v, w_o: projection weights
        biases: optional (b_q, b_k, b_v, b_o)
        rope_base: rotate queries and keys per head when given
        return_logits: also return the pre-softmax logits [B, n_h, L, L]
    """
    b_q = b_k = b_v = b_o = None
    if biases is not None:
        b_q, b_k, b_v, b_o = biases
    q = split_heads(linear(x, w_q, b_q), n_h)
    k = split_heads(linear(x, w_k, b_k), n_h)
    v = split_heads(linear(x, w_v, b_v), n_h)
    if rope_base is not None:
        q = rope_rotate(q, base=rope_base)
        k = rope_rotate(k, base=rope_base)
    d_k = q.shape[-1]
    out = attention(q, k, v, d_k=d_k, causal=causal, key_mask=key_mask)
    out = linear(merge_heads(out), w_o, b_o)
    if return_logits:
        logits = matmul(q, swap_last(k)) * (1.0 / np.sqrt(d_k))
        return out, logits
    return out


# ============================================================================
# CAUSAL DEPTHWISE CONVOLUTION
# ============================================================================
def causal_depthwise_conv(x, weight, bias):
    """
    Per-channel causal convolution along the sequence axis.

    Args:
        x: Tensor[B, L, D]
        weight: Tensor[D, k]; tap k-1 multiplies the current position
        bias: Tensor[D]
    """
    x = as_tensor(x)
    B, L, D = x.shape
    k = weight.shape[-1]
    padded = concat([Tensor(np.zeros((B, k - 1, D))), x], axis=1)
    out = None
    for j in range(k):
        term = getitem(padded, (slice(None), slice(j, j + L), slice(None))) * getitem(weight, (slice(None), j))
        out = term if out is None else out + term
    return out + bias
