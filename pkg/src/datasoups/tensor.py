"""Dense arrays with tape-free reverse-mode autodiff.

Every op builds a node that remembers its parents and a closure that pushes
the output gradient back to them.  ``backward`` walks the nodes in reverse
topological order.  Values live in numpy arrays (f32 for training, f64 for
gradient checks).
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN; carries the op name."""

    def __init__(self, op, where="forward"):
        super().__init__(f"NaN produced by op '{op}' during {where}")
        self.op = op


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    # -- operator sugar ----------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op):
    if np.isnan(data).any():
        raise NonFiniteError(op)
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------

def _pair(a, b):
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    if not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def exp(a):
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _make(out, (a,), bw, "exp")


def log(a):
    def bw(g):
        _accum(a, g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), bw, "log")


def sqrt(a):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / out)

    return _make(out, (a,), bw, "sqrt")


def clamp_min(a, lo):
    keep = a.data >= lo
    out = np.where(keep, a.data, np.asarray(lo, dtype=a.dtype))

    def bw(g):
        _accum(a, g * keep)

    return _make(out, (a,), bw, "clamp_min")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh form: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _accum(a, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner))

    return _make(out, (a,), bw, "gelu")


def apply_mask(a, mask, scale=1.0):
    """Multiply by a constant (non-differentiable) mask and rescale, as used
    for dropout and drop-path."""
    m = np.asarray(mask, dtype=a.dtype) * a.dtype.type(scale)

    def bw(g):
        _accum(a, g * m)

    return _make(a.data * m, (a,), bw, "mask")


# -- reductions ----------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(np.asarray(out).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _make(np.asarray(out), (a,), bw, "mean")


# -- shape ops -----------------------------------------------------------

def reshape(a, shape):
    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)


def getitem(a, idx):
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.asarray(a.data[idx]), (a,), bw, "getitem")


def take(a, indices, axis=0):
    indices = np.asarray(indices)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        _accum(a, full)

    return _make(np.take(a.data, indices, axis=axis), (a,), bw, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def roll(a, shift, axis):
    def bw(g):
        _accum(a, np.roll(g, tuple(-s for s in shift), axis=axis))

    return _make(np.roll(a.data, shift, axis=axis), (a,), bw, "roll")


# -- linear algebra ------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes so BLAS sees one GEMM and the weight grad needs no reduction
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _accum(b, a2.T @ g2)

        return _make((a2 @ b.data).reshape(lead + (b.shape[1],)), (a, b), bw, "matmul")

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- fused normalisations ------------------------------------------------

def softmax(a, axis=-1):
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw, "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        sm = np.exp(out)
        _accum(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw, "log_softmax")


def layer_norm(a, gamma, beta, eps=1e-5):
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(a, dx)

    return _make(out.astype(x.dtype, copy=False), (a, gamma, beta), bw, "layer_norm")


def l2_normalize(a, axis=-1):
    """Scale vectors along ``axis`` to unit length (cosine normalisation)."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    if (norm == 0).any():
        raise ZeroDivisionError("zero-norm vector in cosine normalisation")
    out = x / norm

    def bw(g):
        _accum(a, (g - out * (g * out).sum(axis=axis, keepdims=True)) / norm)

    return _make(out, (a,), bw, "l2_normalize")


# -- graph traversal -----------------------------------------------------

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out, output_grad=None):
    """Accumulate d(out . output_grad)/d(leaf) into ``leaf.grad``."""
    if not out.requires_grad:
        return
    if output_grad is None:
        if out.data.size != 1:
            raise ValueError("output_grad is required for non-scalar outputs")
        output_grad = np.ones_like(out.data)
    output_grad = np.asarray(output_grad, dtype=out.dtype)
    if output_grad.shape != out.shape:
        raise ValueError(f"output_grad shape {output_grad.shape} != output shape {out.shape}")
    order = _topo(out)
    for node in order:
        if node._backward is not None:
            node.grad = None
    out.grad = output_grad.copy()
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        if np.isnan(node.grad).any():
            raise NonFiniteError(node.op, "backward")
        # free intermediate storage as we go
        node.grad = None
        node._backward = None
        node._parents = ()


def grad_check(fn, point, eps=1e-5):
    """Largest relative error between backward and central differences.

    ``fn`` maps a dict of Tensors to a scalar Tensor.  ``point`` maps names to
    float64 arrays.  The relative error for each component is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    arrays = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    out = fn(leaves)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar output")
    if out.dtype != np.float64:
        raise TypeError("grad_check requires float64")
    backward(out)

    worst = 0.0
    for k, base in arrays.items():
        analytic = leaves[k].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = float(fn({n: Tensor(a) for n, a in arrays.items()}).data)
            flat[i] = orig - eps
            with no_grad():
                fm = float(fn({n: Tensor(a) for n, a in arrays.items()}).data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


sum = sum_  # noqa: A001  public alias; sum_ avoids shadowing inside this module
