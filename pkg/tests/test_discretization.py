import math

import numpy as np
import pytest

from ehr_sequence_workbench.discretization import (
    causal_convolve, conv_kernel, discretize_zoh, selective_scan, ssm_scan,
)
from ehr_sequence_workbench.tensor import Tensor, no_grad, parameter, tsum


def test_zoh_matches_scalar_closed_form():
    a, b, delta = -0.7, 1.3, 0.25
    a_bar, b_bar = discretize_zoh(a, b, delta)
    assert a_bar == pytest.approx(math.exp(delta * a), abs=1e-12)
    assert b_bar == pytest.approx((math.exp(delta * a) - 1.0) / a * b, abs=1e-12)


def test_zoh_series_limit_near_zero():
    for a in (1e-11, -1e-11, 0.0):
        a_bar, b_bar = discretize_zoh(a, 2.0, 0.5)
        assert b_bar == pytest.approx(0.5 * 2.0, abs=1e-10)
        assert a_bar == pytest.approx(1.0, abs=1e-10)


def test_zoh_branches_agree_at_threshold():
    # value just above and just below the series switch
    _, above = discretize_zoh(1.01e-6, 1.0, 1.0)
    _, below = discretize_zoh(0.99e-6, 1.0, 1.0)
    assert above == pytest.approx(below, abs=1e-10)


def test_zoh_rejects_non_positive_step():
    with pytest.raises(ValueError, match="must be positive"):
        discretize_zoh(-1.0, 1.0, 0.0)


def test_scan_equals_convolution_for_time_invariant_parameters():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        L = int(rng.integers(1, 65))
        n = int(rng.integers(1, 5))
        a = -rng.uniform(0.1, 2.0, size=n)
        a_bar, b_bar = discretize_zoh(a, rng.normal(size=n), rng.uniform(0.01, 0.5))
        c = rng.normal(size=n)
        x = rng.normal(size=L)
        scanned = ssm_scan(Tensor(x), np.tile(a_bar, (L, 1)), np.tile(b_bar, (L, 1)), np.tile(c, (L, 1))).data
        kernel = conv_kernel(a_bar, b_bar, c, L)
        np.testing.assert_allclose(scanned, causal_convolve(Tensor(x), kernel).data, rtol=0, atol=1e-10)


def test_scalar_state_scan_matches_loop():
    x = np.array([1.0, 0.0, -2.0, 0.5])
    a, b, c = 0.5, 2.0, 3.0
    y = ssm_scan(Tensor(x), np.full(4, a), np.full(4, b), np.full(4, c)).data
    h, expected = 0.0, []
    for xk in x:
        h = a * h + b * xk
        expected.append(c * h)
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_scan_length_mismatch_raises():
    with pytest.raises(ValueError, match="length mismatch"):
        ssm_scan(Tensor(np.ones(4)), np.ones(3), np.ones(4), np.ones(4))


def test_scan_gradients(finite_difference, rel_err):
    rng = np.random.default_rng(0)
    L, n = 6, 3
    params = [
        parameter(rng.normal(size=L)),
        parameter(rng.uniform(0.2, 0.9, size=(L, n))),
        parameter(rng.normal(size=(L, n))),
        parameter(rng.normal(size=(L, n))),
    ]
    weights = rng.normal(size=L)

    def loss():
        with no_grad():
            return tsum(ssm_scan(*params) * weights).item()

    tsum(ssm_scan(*params) * weights).backward()
    for p in params:
        assert rel_err(p.grad, finite_difference(loss, p.data)) < 1e-4


def test_selective_scan_matches_reference_loop():
    rng = np.random.default_rng(5)
    Bt, L, D, N = 2, 5, 3, 4
    u = rng.normal(size=(Bt, L, D))
    delta = rng.uniform(0.01, 0.3, size=(Bt, L, D))
    A = -rng.uniform(0.5, 3.0, size=(D, N))
    B, C = rng.normal(size=(Bt, L, N)), rng.normal(size=(Bt, L, N))
    y = selective_scan(*(Tensor(t) for t in (u, delta, A, B, C))).data
    for b in range(Bt):
        for d in range(D):
            h = np.zeros(N)
            for t in range(L):
                a_bar, b_bar = discretize_zoh(A[d], B[b, t], delta[b, t, d])
                h = a_bar * h + b_bar * u[b, t, d]
                assert y[b, t, d] == pytest.approx(C[b, t] @ h, abs=1e-10)


def test_selective_scan_gradients(finite_difference, rel_err):
    rng = np.random.default_rng(9)
    Bt, L, D, N = 1, 4, 2, 3
    params = [
        parameter(rng.normal(size=(Bt, L, D))),
        parameter(rng.uniform(0.05, 0.5, size=(Bt, L, D))),
        parameter(-rng.uniform(0.5, 2.0, size=(D, N))),
        parameter(rng.normal(size=(Bt, L, N))),
        parameter(rng.normal(size=(Bt, L, N))),
    ]
    weights = rng.normal(size=(Bt, L, D))

    def loss():
        with no_grad():
            return tsum(selective_scan(*params) * weights).item()

    tsum(selective_scan(*params) * weights).backward()
    for p in params:
        assert rel_err(p.grad, finite_difference(loss, p.data)) < 1e-4


def test_selective_scan_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        selective_scan(np.ones((1, 3, 2)), np.ones((1, 3, 2)), np.ones((2, 4)), np.ones((1, 3, 4)), np.ones((1, 3, 3)))
