# ============================================================================
# DISCRETIZATION MODULE
# ============================================================================
# Discretizes continuous state-space models h'(t) = A h(t) + B x(t) into
# recurrences h_k = A_bar h_{k-1} + B_bar x_k using zero-order hold
# Provides the recurrent scan, its equivalent convolution kernel and the
# fused input-dependent (selective) scan used by the SSM blocks

import numpy as np

from .tensor import Tensor, as_tensor, make_result

# Below this |delta * a| the ZOH input factor switches to its Taylor series
ZOH_SERIES_THRESHOLD = 1e-6
# Below this |delta * a| the derivative of the factor switches to its series
ZOH_GRAD_SERIES_THRESHOLD = 1e-3

# ============================================================================
# ZERO-ORDER HOLD
# ============================================================================
def _phi(z):
    # (exp(z) - 1) / z, exact away from 0 and by series near it
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < ZOH_SERIES_THRESHOLD
    big = ~small
    out[big] = np.expm1(z[big]) / z[big]
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
    return out


def _phi_prime(z):
    # d/dz of (exp(z) - 1) / z
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < ZOH_GRAD_SERIES_THRESHOLD
    big = ~small
    zb = z[big]
    out[big] = (zb * np.exp(zb) - np.expm1(zb)) / (zb * zb)
    zs = z[small]
    out[small] = 0.5 + zs / 3.0 + zs * zs / 8.0 + zs ** 3 / 30.0
    return out


def discretize_zoh(a, b_in, delta):
    """
    Zero-order hold discretization of a scalar or diagonal SSM.

    a_bar = exp(delta * a)
    b_bar = ((exp(delta * a) - 1) / a) * b_in
          = delta * b_in * (1 + delta*a/2 + (delta*a)^2/6)   when |delta*a| < 1e-6

    Args:
        a: real or diagonal vector of the continuous state matrix
        b_in: input coefficient(s)
        delta: step size, strictly positive

    Returns:
        (a_bar, b_bar) as floats when all inputs are scalars, arrays otherwise
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b_in, dtype=np.float64)
    d_arr = np.asarray(delta, dtype=np.float64)
    if np.any(d_arr <= 0):
        raise ValueError(f"ZOH step must be positive, got {delta}")
    z = d_arr * a_arr
    a_bar = np.exp(z)
    b_bar = d_arr * _phi(np.atleast_1d(z)).reshape(np.shape(z)) * b_arr
    if a_bar.ndim == 0 and np.ndim(b_bar) == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


# ============================================================================
# RECURRENT SCAN
# ============================================================================
def _per_step(param, L, name):
    p = as_tensor(param)
    if p.ndim == 0 or p.shape[0] != L:
        raise ValueError(f"ssm_scan length mismatch: {name} has shape {p.shape}, input length {L}")
    return p


def ssm_scan(x, a_bar, b_bar, c):
    """
    Runs h_k = a_bar_k * h_{k-1} + b_bar_k * x_k, y_k = c_k . h_k with h_0 = 0.

    Args:
        x: Tensor[L]
        a_bar, b_bar, c: Tensor[L] (scalar state) or Tensor[L, n] (diagonal state)

    Returns:
        y: Tensor[L]
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise ValueError(f"ssm_scan expects a 1-D input, got shape {x.shape}")
    L = x.shape[0]
    a_bar = _per_step(a_bar, L, "a_bar")
    b_bar = _per_step(b_bar, L, "b_bar")
    c = _per_step(c, L, "c")
    shapes = {a_bar.shape, b_bar.shape, c.shape}
    if len(shapes) != 1:
        raise ValueError(f"ssm_scan parameter shapes disagree: {sorted(shapes)}")
    scalar_state = a_bar.ndim == 1
    A = a_bar.data.reshape(L, -1)
    Bb = b_bar.data.reshape(L, -1)
    Cc = c.data.reshape(L, -1)
    n = A.shape[1]

    hs = np.zeros((L, n))
    h = np.zeros(n)
    for k in range(L):
        h = A[k] * h + Bb[k] * x.data[k]
        hs[k] = h
    y = (Cc * hs).sum(axis=1)

    def backward(g):
        dA = np.zeros_like(A)
        dB = np.zeros_like(Bb)
        dx = np.zeros(L)
        carry = np.zeros(n)
        for k in range(L - 1, -1, -1):
            dh = g[k] * Cc[k] + carry
            h_prev = hs[k - 1] if k > 0 else np.zeros(n)
            dA[k] = dh * h_prev
            dB[k] = dh * x.data[k]
            dx[k] = (dh * Bb[k]).sum()
            carry = A[k] * dh
        dC = g[:, None] * hs
        shape = (L,) if scalar_state else (L, n)
        return dx, dA.reshape(shape), dB.reshape(shape), dC.reshape(shape)

    return make_result(y, (x, a_bar, b_bar, c), backward)


# ============================================================================
# CONVOLUTION KERNEL
# ============================================================================
def conv_kernel(a_bar, b_bar, c, L):
    """
    K_bar = (c b_bar, c a_bar b_bar, ..., c a_bar^(L-1) b_bar) for constant parameters.

    Scalars describe a one-dimensional state; equal-length vectors a diagonal one.
    """
    a = np.atleast_1d(np.asarray(a_bar, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b_bar, dtype=np.float64))
    cc = np.atleast_1d(np.asarray(c, dtype=np.float64))
    powers = a[None, :] ** np.arange(L)[:, None]
    return Tensor((powers * (cc * b)[None, :]).sum(axis=1))


def causal_convolve(x, kernel):
    # y_k = sum_{j<=k} K_j x_{k-j}
    x = np.asarray(as_tensor(x).data, dtype=np.float64)
    k = np.asarray(as_tensor(kernel).data, dtype=np.float64)
    return Tensor(np.convolve(x, k)[: x.shape[0]])


# ============================================================================
# SELECTIVE SCAN
# ============================================================================
def selective_scan(u, delta, A, B, C):
    """
    Input-dependent diagonal SSM with per-token ZOH discretization.

    For every batch b, step t, channel d and state n:
        a_bar = exp(delta[b,t,d] * A[d,n])
        b_bar = delta[b,t,d] * phi(delta[b,t,d] * A[d,n]) * B[b,t,n]
        h[t]  = a_bar * h[t-1] + b_bar * u[b,t,d]
        y[b,t,d] = sum_n C[b,t,n] * h[t][d,n]

    Args:
        u, delta: Tensor[Bt, L, D]
        A: Tensor[D, N]
        B, C: Tensor[Bt, L, N]

    Returns:
        y: Tensor[Bt, L, D]
    """
    u, delta, A, B, C = (as_tensor(t) for t in (u, delta, A, B, C))
    Bt, L, D = u.shape
    N = A.shape[-1]
    if delta.shape != u.shape or A.shape != (D, N) or B.shape != (Bt, L, N) or C.shape != (Bt, L, N):
        raise ValueError(
            f"selective_scan shape mismatch: u{u.shape} delta{delta.shape} "
            f"A{A.shape} B{B.shape} C{C.shape}"
        )
    ud, dd, Ad, Bd, Cd = u.data, delta.data, A.data, B.data, C.data

    hs = np.empty((Bt, L, D, N))
    h = np.zeros((Bt, D, N))
    for t in range(L):
        z = dd[:, t, :, None] * Ad[None]
        a_bar = np.exp(z)
        b_bar = dd[:, t, :, None] * _phi(z) * Bd[:, t, None, :]
        h = a_bar * h + b_bar * ud[:, t, :, None]
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, Cd)

    def backward(g):
        du = np.empty_like(ud)
        ddelta = np.empty_like(dd)
        dA = np.zeros_like(Ad)
        dB = np.empty_like(Bd)
        dC = np.einsum("bld,bldn->bln", g, hs)
        carry = np.zeros((Bt, D, N))
        for t in range(L - 1, -1, -1):
            dt_col = dd[:, t, :, None]
            z = dt_col * Ad[None]
            a_bar = np.exp(z)
            phi = _phi(z)
            f = dt_col * phi
            b_bar = f * Bd[:, t, None, :]
            dh = g[:, t, :, None] * Cd[:, t, None, :] + carry
            h_prev = hs[:, t - 1] if t > 0 else 0.0
            d_abar = dh * h_prev
            d_bbar = dh * ud[:, t, :, None]
            du[:, t] = (dh * b_bar).sum(axis=-1)
            dB[:, t] = (d_bbar * f).sum(axis=1)
            df = d_bbar * Bd[:, t, None, :]
            dz_from_a = d_abar * a_bar
            # df/d(delta) = exp(z), df/dA = delta^2 * phi'(z)
            ddelta[:, t] = (dz_from_a * Ad[None] + df * a_bar).sum(axis=-1)
            dA += (dz_from_a * dt_col + df * dt_col * dt_col * _phi_prime(z)).sum(axis=0)
            carry = a_bar * dh
        return du, ddelta, dA, dB, dC

    return make_result(y, (u, delta, A, B, C), backward)
