"""Dense N-D tensors with reverse-mode automatic differentiation.

Every differentiable operation used by the rest of the package is defined
here.  The graph is define-by-run: each op returns a new Tensor that keeps
references to its parents and a closure that accumulates gradients into
them.  ``backward()`` on a scalar replays the closures in reverse
topological order.

Two numeric widths are supported.  float64 is the default (oracle and
gradient-check mode); training switches to float32 via
``set_default_dtype``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DomainError, ShapeError, ValidationError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used for tensors created from raw data ('float32'/'float64')."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValidationError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (eval / benchmarking)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy-backed array node in the autodiff graph.

    ``data`` is always a numpy float array.  ``grad`` is lazily allocated
    and accumulated additively, so a tensor consumed by several ops
    receives the sum of all contributions.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # --- introspection ---

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # --- autodiff core ---

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate grads of every reachable tensor; requires a scalar output."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # --- operator sugar ---

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    # --- method aliases for the functional ops ---

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def permute(self, *axes):
        return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor):
    """Iterative DFS postorder: parents always precede children in the result."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; records the graph only when grads are live."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting rules)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b``; supports (..., M, D) @ (D, K) and 2-D @ 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects (..., M, D) @ (D, K), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            d, k = b.shape
            gb = a.data.reshape(-1, d).T @ g.reshape(-1, k)
            b._accumulate(gb)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / data)

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    # subgradient at 0 is 0
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(data, (a,), backward)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = _sigmoid_stable(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = _as_tensor(a)
    s = _sigmoid_stable(a.data)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 + a.data * (1.0 - s)))

    return _make(data, (a,), backward)


SOFTPLUS_LINEAR_CUTOFF = 20.0


def softplus(a) -> Tensor:
    """log(1 + exp(x)), linearized to x above the overflow cutoff."""
    a = _as_tensor(a)
    x = a.data
    data = np.where(x > SOFTPLUS_LINEAR_CUTOFF, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_CUTOFF))))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * _sigmoid_stable(x))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape / movement ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward)


def permute(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _make(data, (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))

    return _make(data, (a,), backward)


def gather(a, index: np.ndarray, axis: int) -> Tensor:
    """take_along_axis with a full-shaped integer index; scatter-add backward."""
    a = _as_tensor(a)
    index = np.asarray(index)
    if index.ndim != a.ndim:
        raise ShapeError(f"gather index rank {index.ndim} != tensor rank {a.ndim}")
    data = np.take_along_axis(a.data, index, axis=axis)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            loc = list(np.indices(index.shape, sparse=False))
            loc[axis] = index
            np.add.at(ga, tuple(loc), g)
            a._accumulate(ga)

    return _make(data, (a,), backward)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis."""
    a = _as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    data = np.pad(a.data, widths)
    sel = [slice(None)] * a.ndim
    sel[axis] = slice(before, before + a.shape[axis])
    sel = tuple(sel)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[sel])

    return _make(data, (a,), backward)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    sel = [slice(None)] * a.ndim
    sel[axis] = slice(start, stop)
    sel = tuple(sel)
    data = a.data[sel].copy()

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[sel] = g
            a._accumulate(ga)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape) / count)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------------

def pointwise_conv2d(x, w, b) -> Tensor:
    """1x1 convolution over the channel axis of an [N, C, T, V] tensor.

    out[n,o,t,v] = b[o] + sum_i w[o,i] * x[n,i,t,v]
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 4 or w.ndim != 2:
        raise ShapeError(f"pointwise_conv2d expects x[N,C,T,V], w[Cout,Cin]; got {x.shape}, {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"channel mismatch: x has {x.shape} but w has {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)")
    n, ci, t, v = x.shape
    co = w.shape[0]
    data = (w.data @ x.data.reshape(n, ci, t * v)).reshape(n, co, t, v) \
        + b.data[None, :, None, None]

    def backward(g):
        gm = g.reshape(n, co, t * v)
        if x.requires_grad:
            x._accumulate((w.data.T @ gm).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3])))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(data, (x, w, b), backward)


def causal_conv1d_depthwise(x, w, b) -> Tensor:
    """Per-channel causal convolution along the middle axis of x[N, T, D].

    The sequence is left-padded with K-1 zeros so out[t] only sees x[<=t].
    w has shape [D, K], b shape [D].
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 3 or w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise ShapeError(f"causal conv1d expects x[N,T,D], w[D,K]; got {x.shape}, {w.shape}")
    n, t, d = x.shape
    k = w.shape[1]
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    data = np.zeros_like(x.data)
    for j in range(k):
        data += w.data[:, j][None, None, :] * xp[:, j:j + t, :]
    data += b.data[None, None, :]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + t, :] += g * w.data[:, j][None, None, :]
            x._accumulate(gxp[:, k - 1:, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for j in range(k):
                gw[:, j] = np.einsum("ntd,ntd->d", g, xp[:, j:j + t, :])
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 1)))

    return _make(data, (x, w, b), backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var, training: bool,
                 momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of x[N, C, T, V] over the (N, T, V) axes.

    Train mode normalizes with batch statistics and updates the running
    arrays in place (exponential moving average, unbiased variance).  Eval
    mode normalizes with the running statistics.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects x[N,C,T,V], got {x.shape}")
    n, c, t, v = x.shape
    if training:
        count = n * t * v
        if count < 2:
            raise DomainError(f"batch_norm2d train mode needs >=2 elements per channel, got {count}")
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        xhat = centered / sqrt(var + eps)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.data.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(c) * count / (count - 1)
    else:
        rm = Tensor(running_mean.reshape(1, c, 1, 1), dtype=x.dtype)
        rv = Tensor(running_var.reshape(1, c, 1, 1), dtype=x.dtype)
        xhat = (x - rm) / sqrt(rv + eps)
    g = reshape(gamma, (1, c, 1, 1))
    b = reshape(beta, (1, c, 1, 1))
    return xhat * g + b


def rms_norm(x, gain, eps: float = 1e-5) -> Tensor:
    """x / sqrt(mean(x^2, last axis) + eps) * gain."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    if x.shape[-1] != gain.shape[0]:
        raise ShapeError(f"rms_norm gain {gain.shape} does not match last dim of {x.shape}")
    ms = (x * x).mean(axis=-1, keepdims=True)
    return x / sqrt(ms + eps) * gain


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True), dtype=x.dtype)  # detached, grad-free
    e = exp(x - shift)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label]; stabilized by max subtraction."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross entropy expects logits[N,K] and labels[N]; got {logits.shape}, {labels.shape}")
    k = logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        bad = int(np.argmax((labels < 0) | (labels >= k)))
        raise ValidationError(f"label {labels[bad]} at row {bad} outside [0, {k})")
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True), dtype=logits.dtype)
    z = logits - shift
    lse = log(exp(z).sum(axis=1, keepdims=True))
    picked = gather(z, labels[:, None], axis=1)
    return (lse - picked).mean()
