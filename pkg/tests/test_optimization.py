import numpy as np
import pytest

from ehr_sequence_workbench.optimization import AdamW, adamw_step, check_finite, decays, init_state
from ehr_sequence_workbench.tensor import parameter


def test_single_step_matches_closed_form():
    params = {"layers.0.w": np.array([[1.0, -2.0]]), "layers.0.b": np.array([0.5])}
    grads = {"layers.0.w": np.array([[0.1, -0.3]]), "layers.0.b": np.array([2.0])}
    state = init_state(params)
    lr, wd, eps = 1e-2, 0.1, 1e-8
    updated = adamw_step(params, grads, state, lr=lr, weight_decay=wd, eps=eps)
    # after one step the bias-corrected moments are g and g**2
    for name in params:
        g = grads[name]
        expected = params[name] - lr * g / (np.abs(g) + eps)
        if name.endswith(".w"):
            expected = expected - lr * wd * params[name]
        np.testing.assert_allclose(updated[name], expected, rtol=1e-12)
    assert state["step"] == 1
    assert params["layers.0.w"][0, 0] == 1.0


def test_second_step_uses_bias_corrected_moments():
    params = {"w": np.array([[1.0]])}
    state = init_state(params)
    g1, g2 = np.array([[0.2]]), np.array([[-0.4]])
    params = adamw_step(params, {"w": g1}, state, lr=0.1, weight_decay=0.0)
    before = params["w"].copy()
    params = adamw_step(params, {"w": g2}, state, lr=0.1, weight_decay=0.0)
    m = (0.1 * 0.9 * 0.2 + 0.1 * -0.4) / (1 - 0.9 ** 2)
    v = (0.001 * 0.999 * 0.04 + 0.001 * 0.16) / (1 - 0.999 ** 2)
    np.testing.assert_allclose(params["w"], before - 0.1 * m / (np.sqrt(v) + 1e-8), rtol=1e-10)


def test_decay_mask_spares_vectors_and_ssm_dynamics():
    assert decays("layers.0.attn.wq", np.zeros((4, 4)))
    assert not decays("layers.0.norm.gain", np.zeros(4))
    assert not decays("layers.0.ssm.A_log", np.zeros((4, 2)))
    assert not decays("layers.0.ssm.D", np.zeros((4, 4)))


def test_non_finite_gradients_name_the_parameters():
    with pytest.raises(FloatingPointError, match=r"a \(1 non-finite\), c \(2 non-finite\)"):
        check_finite({"c": np.array([np.inf, np.nan]), "b": np.ones(2), "a": np.array([1.0, np.nan])})


def test_mismatched_inputs_are_rejected():
    state = init_state({"w": np.zeros(2)})
    with pytest.raises(ValueError, match="same names"):
        adamw_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, state, lr=0.1)
    with pytest.raises(ValueError, match="does not match"):
        adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, state, lr=0.1)


def test_optimizer_moves_parameters_downhill():
    w = parameter(np.array([[3.0, -1.0]]))
    opt = AdamW({"w": w}, lr=0.1, weight_decay=0.0)
    for _ in range(50):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert np.all(np.abs(w.data) < 1.0)
    with pytest.raises(ValueError, match="learning rate"):
        AdamW({"w": w}, lr=0.0)
