"""Dense float64 arrays with a reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array and remembers the operation that produced
it. Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every leaf that
requires them. Leaves that hold trainable state are :class:`Parameter`
instances, whose ``grad`` is zero-initialized and additive across backward
passes until :meth:`Parameter.zero_grad` is called.

All operations accept plain arrays (treated as constants) or tensors and
return tensors. Batched inputs are supported wherever numpy broadcasting
applies; gradients are summed back to each operand's shape.
"""

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, ProbeError

DTYPE = np.float64
MASK_SENTINEL = -1e9
_recording = True


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mul(tsum(self), 1.0 / self.data.size)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=DTYPE, copy=True)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


class Parameter(Tensor):
    """Trainable leaf with a zero-initialized, additive gradient buffer."""

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation only)."""
    global _recording
    previous, _recording = _recording, False
    try:
        yield
    finally:
        _recording = previous


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data, parents, backward):
    """Build an op output; ``backward(g)`` returns one gradient per parent."""
    out = Tensor(data)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("operation produced non-finite values")
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward)


def matmul(a, b):
    """Matrix product over the last two axes, batched over any leading axes.

    Raises
    ------
    DimensionError
        If the inner dimensions differ; the message names both shapes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record(np.matmul(a.data, b.data), (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    return record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def tsum(a):
    a = as_tensor(a)
    return record(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def relu(a):
    a = as_tensor(a)
    keep = a.data > 0
    return record(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def causal_mask(K):
    """Boolean admissibility pattern: entry (k, j) is True iff j <= k."""
    return np.tril(np.ones((K, K), dtype=bool))


def masked_softmax_rows(logits, mask=None, mode="additive"):
    """Row-wise softmax restricted to admissible entries.

    ``mode="additive"`` adds ``MASK_SENTINEL`` to inadmissible logits, so
    they receive exactly zero weight. ``mode="multiplicative"`` multiplies
    logits by the 0/1 mask before a plain softmax; masked entries then carry
    logit 0 and leak weight. It exists only as a negative control.
    """
    logits = as_tensor(logits)
    z = logits.data
    if mask is None:
        mask = np.ones(z.shape[-2:], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mode == "additive":
        if not mask.any(axis=-1).all():
            raise InputError("a softmax row has no admissible entries")
        shifted = z + np.where(mask, 0.0, MASK_SENTINEL)
    elif mode == "multiplicative":
        shifted = z * mask
    else:
        raise InputError(f"unknown mask mode {mode!r}")
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    if mode == "additive":
        p = np.where(mask, p, 0.0)
        scale = 1.0
    else:
        scale = mask.astype(DTYPE)

    def backward(g):
        gz = p * (g - (g * p).sum(axis=-1, keepdims=True))
        return (gz * scale,)

    return record(p, (logits,), backward)


def layer_norm(x, gain, bias, eps=1e-6):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gh = g * gain.data
        gx = inv_std * (
            gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return record(out, (x, gain, bias), backward)


def embedding(table, index, pad=None):
    """Row lookup ``table[index]``; entries equal to ``pad`` map to zero rows."""
    table = as_tensor(table)
    index = np.asarray(index)
    n = table.shape[0]
    valid = np.ones(index.shape, dtype=bool) if pad is None else index != pad
    if index.size and ((index[valid] < 0).any() or (index[valid] >= n).any()):
        raise InputError(f"item index outside [0, {n})")
    safe = np.where(valid, index, 0)
    out = table.data[safe] * valid[..., None]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, safe[valid], g[valid])
        return (gt,)

    return record(out, (table,), backward)


def take_masked(vector, index, mask):
    """Scatter a parameter vector into an array: ``out = where(mask, vector[index], 0)``."""
    vector = as_tensor(vector)
    index = np.asarray(index)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, vector.data[np.where(mask, index, 0)], 0.0)

    def backward(g):
        gv = np.zeros_like(vector.data)
        np.add.at(gv, index[mask], g[mask])
        return (gv,)

    return record(out, (vector,), backward)


def dropout(x, p, rng, training=True):
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return record(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits, targets, valid):
    """Mean negative log-softmax of ``targets`` over the ``valid`` positions.

    ``logits`` has shape ``(..., N)``; ``targets`` and ``valid`` share the
    leading shape. With no valid position the loss is 0 with zero gradient.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return record(np.array(0.0), (logits,), lambda g: (np.zeros_like(logits.data),))
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)) + zmax
    safe_t = np.where(valid, targets, 0)
    picked = np.take_along_axis(z, safe_t[..., None], axis=-1)
    nll = (lse - picked)[..., 0]
    loss = float(nll[valid].sum()) / count

    def backward(g):
        probs = np.exp(z - lse)
        np.put_along_axis(
            probs, safe_t[..., None], np.take_along_axis(probs, safe_t[..., None], axis=-1) - 1.0, axis=-1
        )
        return (probs * (valid[..., None] * (g / count)),)

    return record(np.array(loss), (logits,), backward)


@dataclass
class GradCheckReport:
    max_deviation: float
    passed: bool
    step: float
    tol: float
    step_in_range: bool
    per_parameter: dict = field(default_factory=dict)

    def summary(self):
        flag = "" if self.step_in_range else " (step outside [1e-5, 1e-3])"
        verdict = "pass" if self.passed else "FAIL"
        return f"{verdict}: max deviation {self.max_deviation:.3e} < {self.tol:g}{flag}"


def grad_check(loss_fn, params, step=1e-5, tol=1e-4):
    """Compare tape gradients with central finite differences.

    Parameters
    ----------
    loss_fn : callable
        Zero-argument function returning a scalar ``Tensor``. It must read
        the current values of ``params`` on every call.
    params : iterable of Parameter, or dict name -> Parameter
    step : float
        Finite-difference step. Values outside ``[1e-5, 1e-3]`` are still
        used but flagged in the report.
    tol : float
        The check passes iff the max relative deviation is below ``tol``.

    The deviation for one parameter is ``max|a - n| / max(max|a|, max|n|, 1e-7)``
    with ``a`` the tape gradient and ``n`` the numeric one; the report keeps
    the worst parameter.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]

    for _, p in named:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise ProbeError("loss is non-finite at the base point")
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named}

    per = {}
    for name, p in named:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().data)
            flat[i] = orig - step
            down = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ProbeError(f"non-finite loss probing {name}[{i}]")
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        a = analytic[name]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-7)
        per[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
    for _, p in named:
        p.zero_grad()

    worst = max(per.values(), default=0.0)
    return GradCheckReport(
        max_deviation=worst,
        passed=worst < tol,
        step=step,
        tol=tol,
        step_in_range=1e-5 <= step <= 1e-3,
        per_parameter=per,
    )
