import numpy as np
import pytest

from ehr_sequence_workbench.functional import (
    GELU_C, attention, causal_depthwise_conv, gelu, geglu, layer_norm, multi_head_attention,
    rms_norm, rope_rotate, silu, swiglu,
)
from ehr_sequence_workbench.tensor import Tensor, no_grad, parameter, tsum

INSTANCES = 20


def _gradcheck(fn, shapes, finite_difference, rel_err, seed, tol=1e-4):
    rng = np.random.default_rng(seed)
    params = [parameter(rng.normal(size=shape)) for shape in shapes]
    with no_grad():
        weights = rng.normal(size=fn(*params).shape)

    def loss():
        with no_grad():
            return tsum(fn(*params) * weights).item()

    tsum(fn(*params) * weights).backward()
    for p in params:
        assert rel_err(p.grad, finite_difference(loss, p.data)) < tol


KERNELS = {
    "gelu": (lambda x: gelu(x), [(3, 4)]),
    "silu": (lambda x: silu(x), [(3, 4)]),
    "geglu": (lambda x, w, v: geglu(x, w, v), [(2, 3), (3, 4), (3, 4)]),
    "swiglu": (lambda x, w, v: swiglu(x, w, v), [(2, 3), (3, 4), (3, 4)]),
    "layer_norm": (lambda x, g, b: layer_norm(x, g, b), [(3, 5), (5,), (5,)]),
    "rms_norm": (lambda x, g: rms_norm(x, g), [(3, 5), (5,)]),
    "rope": (lambda x: rope_rotate(x, base=100.0), [(2, 5, 4)]),
    "attention_causal": (lambda q, k, v: attention(q, k, v, causal=True), [(1, 4, 3), (1, 4, 3), (1, 4, 3)]),
    "attention_masked": (
        lambda q, k, v: attention(q, k, v, key_mask=np.array([[True, True, True, False]])),
        [(1, 4, 3), (1, 4, 3), (1, 4, 3)],
    ),
    "multi_head_attention": (
        lambda x, wq, wk, wv, wo: multi_head_attention(x, wq, wk, wv, wo, n_h=2, causal=True, rope_base=10000.0),
        [(1, 3, 4), (4, 4), (4, 4), (4, 4), (4, 4)],
    ),
    "causal_conv": (lambda x, w, b: causal_depthwise_conv(x, w, b), [(2, 5, 3), (3, 4), (3,)]),
}


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_kernel_gradients_match_central_differences(name, finite_difference, rel_err):
    fn, shapes = KERNELS[name]
    for seed in range(INSTANCES):
        _gradcheck(fn, shapes, finite_difference, rel_err, seed)


def test_gelu_matches_tanh_formula():
    x = np.linspace(-4.0, 4.0, 41)
    expected = 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(gelu(Tensor(x)).data, expected, rtol=0, atol=1e-12)
    assert gelu(Tensor(0.0)).item() == 0.0


def test_silu_matches_definition():
    x = np.linspace(-6.0, 6.0, 25)
    np.testing.assert_allclose(silu(Tensor(x)).data, x / (1.0 + np.exp(-x)), rtol=0, atol=1e-12)


def test_rms_norm_of_constant_row_is_ones():
    out = rms_norm(Tensor(np.full((2, 8), 3.0)), Tensor(np.ones(8))).data
    np.testing.assert_allclose(out, 1.0, atol=1e-6)


def test_layer_norm_rows_have_zero_mean():
    x = np.random.default_rng(4).normal(size=(5, 16)) * 10.0 + 3.0
    out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)


def test_causal_attention_puts_zero_weight_on_future_keys():
    for seed in range(INSTANCES):
        rng = np.random.default_rng(seed)
        q, k, v = (Tensor(rng.normal(size=(2, 6, 4))) for _ in range(3))
        _, weights = attention(q, k, v, causal=True, return_weights=True)
        future = np.triu(np.ones((6, 6), dtype=bool), k=1)
        assert np.all(weights.data[:, future] == 0.0)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_padded_keys_get_zero_weight():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.normal(size=(1, 5, 4))) for _ in range(3))
    key_mask = np.array([[True, True, True, False, False]])
    _, weights = attention(q, k, v, key_mask=key_mask, return_weights=True)
    assert np.all(weights.data[..., 3:] == 0.0)


def test_attention_matches_brute_force():
    for seed in range(INSTANCES):
        rng = np.random.default_rng(seed)
        q, k, v = rng.normal(size=(3, 5, 4))
        expected = np.empty((5, 4))
        for i in range(5):
            logits = np.array([q[i] @ k[j] / 2.0 for j in range(5)])
            w = np.exp(logits - logits.max())
            expected[i] = (w / w.sum()) @ v
        np.testing.assert_allclose(attention(Tensor(q), Tensor(k), Tensor(v)).data, expected, atol=1e-10)


def test_rope_scores_depend_only_on_relative_offset():
    rng = np.random.default_rng(7)
    q, k = rng.normal(size=8), rng.normal(size=8)

    def score(m, n):
        L = max(m, n) + 1
        qs = np.zeros((L, 8))
        ks = np.zeros((L, 8))
        qs[m], ks[n] = q, k
        return rope_rotate(Tensor(qs)).data[m] @ rope_rotate(Tensor(ks)).data[n]

    assert score(5, 3) == pytest.approx(score(12, 10), abs=1e-10)
    assert score(0, 0) == pytest.approx(q @ k, abs=1e-12)


def test_rope_rejects_odd_feature_dim():
    with pytest.raises(ValueError, match="even feature dim"):
        rope_rotate(Tensor(np.zeros((3, 5))))


def test_causal_conv_ignores_future_inputs():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 6, 2))
    w, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=2))
    base = causal_depthwise_conv(Tensor(x), w, b).data
    x[0, 4:] += 10.0
    changed = causal_depthwise_conv(Tensor(x), w, b).data
    np.testing.assert_array_equal(base[0, :4], changed[0, :4])
