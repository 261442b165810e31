# ============================================================================
# TENSOR MODULE
# ============================================================================
# Dense fp64 n-dimensional arrays with reverse-mode differentiation
# Every operation records its parents and a backward closure; Tensor.backward()
# replays the graph in reverse topological order and accumulates gradients

from contextlib import contextmanager

import numpy as np

# ============================================================================
# GRAPH RECORDING STATE
# ============================================================================
_grad_enabled = True


@contextmanager
def no_grad():
    # Disables graph recording inside the block (evaluation, scoring)
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


# ============================================================================
# TENSOR CLASS
# ============================================================================
class Tensor:
    """
    Dense row-major array of 64-bit floats taking part in a backward graph.

    Leaves created with ``requires_grad=True`` collect ``.grad`` after
    ``backward()``. Intermediate tensors only keep parents when at least one
    parent requires a gradient and recording is enabled.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # ------------------------------------------------------------------
    # Array-like properties
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------
    def backward(self, grad=None):
        # Seeds d(self)/d(self) and propagates through the recorded graph
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} does not match {self.shape}")

        order = _topological_order(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # ------------------------------------------------------------------
    # Operator overloads
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # ------------------------------------------------------------------
    # Method forms of common ops
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


# ============================================================================
# GRAPH HELPERS
# ============================================================================
def _topological_order(root):
    # Iterative DFS; graphs from scans and deep stacks exceed the recursion limit
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value):
    # Wraps constants so every op can treat its inputs uniformly
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_result(data, parents, backward):
    # Creates an op output and attaches the graph record when needed
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    # Sums a broadcast gradient back down to the operand shape
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ============================================================================
# ELEMENTWISE ARITHMETIC
# ============================================================================
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape)
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_result(a.data / b.data, (a, b), backward)


def power(a, exponent):
    # Scalar exponent only
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return make_result(np.power(a.data, exponent), (a,), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return make_result(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return make_result(np.log(a.data), (a,), backward)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return make_result(t, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return make_result(s, (a,), backward)


def softplus(a):
    # log(1 + exp(x)), overflow-safe
    a = as_tensor(a)

    def backward(g):
        return (g * _sigmoid(a.data),)

    return make_result(np.logaddexp(0.0, a.data), (a,), backward)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ============================================================================
# REDUCTIONS AND SHAPE OPERATIONS
# ============================================================================
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_result(a.data.transpose(axes), (a,), backward)


def swap_last(a):
    # Swaps the two trailing axes (K -> K^T inside batched attention)
    axes = list(range(as_tensor(a).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, index):
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_result(a.data[index], (a,), backward)


def take_rows(weight, indices):
    # Embedding lookup: weight[V, d] gathered at integer indices of any shape
    weight = as_tensor(weight)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= weight.shape[0]):
        raise ValueError(
            f"index out of range for table of {weight.shape[0]} rows: "
            f"min={indices.min()}, max={indices.max()}"
        )

    def backward(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, indices.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (out,)

    return make_result(weight.data[indices], (weight,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split_last(a, sizes):
    # Splits the trailing axis into consecutive chunks of the given sizes
    a = as_tensor(a)
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != a.shape[-1]:
        raise ValueError(f"split sizes {sizes} do not cover trailing dim {a.shape[-1]}")
    return [a[..., int(lo):int(hi)] for lo, hi in zip(bounds[:-1], bounds[1:])]


def masked_fill(a, mask, value):
    # Replaces entries where mask is True by a constant; no gradient flows there
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, value, a.data)

    def backward(g):
        return (unbroadcast(np.where(mask, 0.0, g), a.shape),)

    return make_result(out_data, (a,), backward)


def dropout(a, p, rng, training=True):
    # Inverted dropout; identity when p == 0 or not training
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    keep = rng.random(a.shape) >= p
    return a * (keep / (1.0 - p))


# ============================================================================
# LINEAR ALGEBRA
# ============================================================================
def matmul(a, b):
    """
    Matrix product with numpy batching semantics.

    Args:
        a: Tensor[..., m, k]
        b: Tensor[..., k, n] (a plain k×n weight broadcasts over batch dims)

    Returns:
        Tensor[..., m, n]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands with at least 2 dims, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_result(np.matmul(a.data, b.data), (a, b), backward)


# ============================================================================
# SOFTMAX FAMILY
# ============================================================================
def _stable_softmax(x, axis):
    # Max-subtraction; rows that are entirely -inf come out as zeros
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    return e / np.where(s == 0.0, 1.0, s)


def softmax(x, axis=-1):
    x = as_tensor(x)
    y = _stable_softmax(x.data, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def softmax_rows(x):
    """Row-wise softmax over the trailing axis; every row sums to one."""
    return softmax(x, axis=-1)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(out_data, (x,), backward)


def cross_entropy(logits, targets):
    """
    Mean negative log-likelihood of integer targets.

    Args:
        logits: Tensor[N, V]
        targets: int array [N]
    """
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(targets.shape[0]), targets]
    return -picked.mean()


# ============================================================================
# PARAMETER UTILITIES
# ============================================================================
def parameter(data, name=None):
    # Trainable leaf
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def stack_grads(params):
    # name -> gradient array (zeros where the parameter received none)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def dump_tensor(path, tensor):
    # Flat little-endian fp64 dump with a shape header line, for debugging
    with open(path, "wb") as fh:
        fh.write((",".join(str(n) for n in tensor.shape) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_tensor_dump(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        shape = tuple(int(n) for n in header.split(",")) if header else ()
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return Tensor(data.copy())
