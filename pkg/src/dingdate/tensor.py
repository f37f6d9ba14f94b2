"""Minimal dense-tensor reverse-mode differentiation on a recording tape.

Every op accepts plain numpy arrays (or scalars) as well as Tensors.  With
no Tensor among the inputs the op is just numpy math and returns an ndarray;
with a Tensor input it returns a Tensor and, if a Tape is active, records a
backward closure.  This lets the factorized graph-inference code run both as
fast numpy and as a differentiable computation without duplication.
"""
from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class NotScalarError(ValueError):
    pass


class Tensor:
    """A float64 array tracked by the active Tape (if any)."""

    __array_ufunc__ = None  # force numpy to defer to our reflected dunders

    def __init__(self, values, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return reduce_mean(self, axis=axis)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.values.shape})"

    def __add__(self, other):
        return _broadcast_add(self, other)

    def __radd__(self, other):
        return _broadcast_add(other, self)

    def __sub__(self, other):
        return _broadcast_add(self, _broadcast_neg(other))

    def __rsub__(self, other):
        return _broadcast_add(other, _broadcast_neg(self))

    def __mul__(self, other):
        return _broadcast_mul(self, other)

    def __rmul__(self, other):
        return _broadcast_mul(other, self)

    def __truediv__(self, other):
        return _broadcast_div(self, other)

    def __rtruediv__(self, other):
        return _broadcast_div(other, self)

    def __neg__(self):
        return _broadcast_neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Recorded operation sequence; backward walks it exactly once, reversed."""

    _stack: list["Tape"] = []

    def __init__(self):
        self._ops: list[_Op] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._stack.pop()
        return False

    @classmethod
    def active(cls):
        return cls._stack[-1] if cls._stack else None

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        """Reverse-mode gradients of a scalar `loss` for every recorded Tensor."""
        if not isinstance(loss, Tensor):
            raise NotScalarError("loss must be a Tensor recorded on this tape")
        if loss.values.size != 1:
            raise NotScalarError(f"loss must be scalar, got shape {loss.values.shape}")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.values)}
        for op in reversed(self._ops):
            gout = grads.get(op.out)
            if gout is None:
                continue
            for inp, gin in zip(op.inputs, op.backward(gout)):
                if gin is None or not isinstance(inp, Tensor):
                    continue
                prev = grads.get(inp)
                grads[inp] = gin if prev is None else prev + gin
        return grads


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Functional alias for Tape.backward."""
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# op plumbing

def values(x) -> np.ndarray:
    """The plain ndarray behind a Tensor (or the input coerced to float64)."""
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


_val = values


def _tracked(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _emit(values, inputs, backward_fn) -> Tensor:
    out = Tensor(values)
    tape = Tape.active()
    if tape is not None:
        tape._ops.append(_Op(out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# broadcasting arithmetic (used through the Tensor dunders)

def _broadcast_add(a, b):
    av, bv = _val(a), _val(b)
    v = av + bv
    if not _tracked(a, b):
        return v

    def bwd(g):
        return (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))

    return _emit(v, (a, b), bwd)


def _broadcast_mul(a, b):
    av, bv = _val(a), _val(b)
    v = av * bv
    if not _tracked(a, b):
        return v

    def bwd(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return _emit(v, (a, b), bwd)


def _broadcast_div(a, b):
    av, bv = _val(a), _val(b)
    v = av / bv
    if not _tracked(a, b):
        return v

    def bwd(g):
        return (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        )

    return _emit(v, (a, b), bwd)


def _broadcast_neg(a):
    av = _val(a)
    if not _tracked(a):
        return -av

    def bwd(g):
        return (-g,)

    return _emit(-av, (a,), bwd)


def power(x, exponent: float):
    """x ** c for a constant real exponent."""
    c = float(exponent)
    xv = _val(x)
    v = xv ** c
    if not _tracked(x):
        return v

    def bwd(g):
        return (g * c * xv ** (c - 1.0),)

    return _emit(v, (x,), bwd)


# ---------------------------------------------------------------------------
# spec ops: strict-shape addition and its gradient-truncated variant

def add(a, b):
    """Element-wise addition of two same-shape operands."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeMismatchError(f"add: shapes {av.shape} and {bv.shape} differ")
    return _broadcast_add(a, b)


def stop_grad_add(a, b):
    """a + b whose backward pass sends the gradient to `a` only.

    The detached operand `b` and everything upstream of it through this edge
    receive zero gradient; the forward value is bit-identical to add(a, b).
    """
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeMismatchError(
            f"stop_grad_add: shapes {av.shape} and {bv.shape} differ"
        )
    v = av + bv
    if not _tracked(a, b):
        return v

    def bwd(g):
        return (g, None)

    return _emit(v, (a, b), bwd)


def detach(x):
    """Cut x out of the gradient flow; the value passes through unchanged."""
    if isinstance(x, Tensor):
        return x.values.copy()
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def _sigmoid_values(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(x).ravel()
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(x.shape)


def sigmoid(x):
    xv = _val(x)
    v = _sigmoid_values(xv)
    if not _tracked(x):
        return v

    def bwd(g):
        return (g * v * (1.0 - v),)

    return _emit(v, (x,), bwd)


def relu(x):
    xv = _val(x)
    v = np.maximum(xv, 0.0)
    if not _tracked(x):
        return v

    def bwd(g):
        return (g * (xv > 0.0),)

    return _emit(v, (x,), bwd)


def exp(x):
    v = np.exp(_val(x))
    if not _tracked(x):
        return v

    def bwd(g):
        return (g * v,)

    return _emit(v, (x,), bwd)


def log(x):
    xv = _val(x)
    v = np.log(xv)
    if not _tracked(x):
        return v

    def bwd(g):
        return (g / xv,)

    return _emit(v, (x,), bwd)


def log1p(x):
    xv = _val(x)
    v = np.log1p(xv)
    if not _tracked(x):
        return v

    def bwd(g):
        return (g / (1.0 + xv),)

    return _emit(v, (x,), bwd)


def softplus(x):
    """log(1 + e^x), computed stably for large |x|."""
    xv = _val(x)
    v = np.logaddexp(0.0, xv)
    if not _tracked(x):
        return v

    def bwd(g):
        return (g * _sigmoid_values(xv),)

    return _emit(v, (x,), bwd)


def clip(x, lo: float, hi: float):
    """Clamp values to [lo, hi]; the gradient passes only where unclamped."""
    xv = _val(x)
    v = np.clip(xv, lo, hi)
    if not _tracked(x):
        return v
    mask = (xv > lo) & (xv < hi)

    def bwd(g):
        return (g * mask,)

    return _emit(v, (x,), bwd)


def softmax(x):
    """Row-wise softmax over the last axis."""
    xv = _val(x)
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    v = e / e.sum(axis=-1, keepdims=True)
    if not _tracked(x):
        return v

    def bwd(g):
        dot = (g * v).sum(axis=-1, keepdims=True)
        return (v * (g - dot),)

    return _emit(v, (x,), bwd)


def log_softmax(x):
    xv = _val(x)
    hi = xv.max(axis=-1, keepdims=True)
    lse = hi + np.log(np.exp(xv - hi).sum(axis=-1, keepdims=True))
    v = xv - lse
    if not _tracked(x):
        return v
    sm = np.exp(v)

    def bwd(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _emit(v, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shaping

def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {av.shape} @ {bv.shape}")
    v = av @ bv
    if not _tracked(a, b):
        return v

    def bwd(g):
        return (g @ bv.T, av.T @ g)

    return _emit(v, (a, b), bwd)


def linear(x, weight, bias):
    """x @ weight + bias for x:[b,i], weight:[i,o], bias:[o]."""
    xv, wv, bv = _val(x), _val(weight), _val(bias)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeMismatchError(f"linear: x {xv.shape} with weight {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise ShapeMismatchError(f"linear: bias {bv.shape} for weight {wv.shape}")
    v = xv @ wv + bv
    if not _tracked(x, weight, bias):
        return v

    def bwd(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return _emit(v, (x, weight, bias), bwd)


def reduce_sum(x, axis=None, keepdims=False):
    xv = _val(x)
    v = xv.sum(axis=axis, keepdims=keepdims)
    if not _tracked(x):
        return v

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        g_ = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_, xv.shape).copy(),)

    return _emit(v, (x,), bwd)


def reduce_mean(x, axis=None):
    xv = _val(x)
    count = xv.size if axis is None else xv.shape[axis]
    return reduce_sum(x, axis=axis) / float(count)


def concat(parts, axis=1):
    vals = [_val(p) for p in parts]
    v = np.concatenate(vals, axis=axis)
    if not _tracked(*parts):
        return v
    widths = [p.shape[axis] for p in vals]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(v, tuple(parts), bwd)


def pick(x, index):
    """Row-wise gather: pick(x, i)[l] = x[l, i[l]]."""
    xv = _val(x)
    idx = np.asarray(index, dtype=np.intp)
    if xv.ndim != 2 or idx.shape != (xv.shape[0],):
        raise ShapeMismatchError(f"pick: x {xv.shape} with index {idx.shape}")
    rows = np.arange(xv.shape[0])
    v = xv[rows, idx]
    if not _tracked(x):
        return v

    def bwd(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _emit(v, (x,), bwd)


def masked_logsumexp(x, mask, include_unit=False):
    """Structured log-sum-exp: out[l,i] = log(1*unit + sum_j mask[i,j]*e^{x[l,j]}).

    `mask` is a constant {0,1} matrix of shape [m, n] for x of shape [b, n].
    Rows with an empty mask are only valid with include_unit=True (giving 0).
    """
    xv = _val(x)
    m = np.asarray(mask, dtype=np.float64)
    if xv.ndim != 2 or m.ndim != 2 or m.shape[1] != xv.shape[1]:
        raise ShapeMismatchError(f"masked_logsumexp: x {xv.shape} with mask {m.shape}")
    if xv.shape[1] == 0:
        fill = 0.0 if include_unit else -np.inf
        v = np.full((xv.shape[0], m.shape[0]), fill)
        if not _tracked(x):
            return v

        def bwd_empty(g):
            return (np.zeros_like(xv),)

        return _emit(v, (x,), bwd_empty)
    with np.errstate(divide="ignore"):
        logmask = np.where(m > 0, 0.0, -np.inf)
    w = xv[:, None, :] + logmask[None, :, :]  # [b, m, n]
    hi = w.max(axis=2)
    if include_unit:
        hi = np.maximum(hi, 0.0)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(invalid="ignore"):
        body = np.exp(w - hi[:, :, None])
    body = np.where(np.isfinite(w), body, 0.0)
    total = body.sum(axis=2)
    if include_unit:
        total = total + np.exp(-hi)
    with np.errstate(divide="ignore"):
        v = hi + np.log(total)
    if not _tracked(x):
        return v

    def bwd(g):
        weights = np.where(np.isfinite(w), np.exp(w - v[:, :, None]), 0.0)
        return ((g[:, :, None] * weights).sum(axis=1),)

    return _emit(v, (x,), bwd)


# ---------------------------------------------------------------------------
# finite differences (the standing gradient oracle)

def numerical_gradient(fn, arrays: list[np.ndarray], step: float = 1e-4):
    """Central finite-difference gradients of scalar fn(arrays) per array entry."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = fn(arrays)
            flat[j] = orig - step
            lo = fn(arrays)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def gradient_mismatch(analytic: np.ndarray, numeric: np.ndarray,
                      rel_tol: float = 1e-4, abs_tol: float = 1e-6) -> float:
    """Worst relative error between gradients, ignoring entries within abs_tol."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = diff <= abs_tol
    rel = np.where(ok, 0.0, diff / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0
