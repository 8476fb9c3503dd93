"""Dense tensors with reverse-mode automatic differentiation.

Values are row-major numpy arrays, float32 by default.  The computation
graph is define-by-run: every operation stores its parents and a closure
that routes the output gradient to them, and ``backward`` replays the
recorded graph once in reverse topological order.  The same operations run
unchanged in float64 when their inputs are float64, which is how the
finite-difference oracle sharpens its comparison.

Tensors are treated as immutable once created; only ``grad`` accumulates.
Gradients add across calls to ``backward`` until explicitly cleared.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError, UsageError, ValidationError

DEFAULT_DTYPE = np.float32

# GELU tanh approximation constants (cubic correction 0.044715)
_GELU_C = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _accumulate(t: Tensor, g) -> None:
    # first contribution copies (g may be a view or shared), later ones add in place
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _acc_owned(t: Tensor, g: np.ndarray) -> None:
    # like _accumulate but for arrays the caller freshly allocated and will not reuse
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents, backward) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc_owned(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _acc_owned(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, -g)

    return _make(-a.data, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with leading batch dimensions broadcast numpy-style."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _acc_owned(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _acc_owned(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bw)


# ---------------------------------------------------------------------------
# transcendental / nonlinear


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g / a.data)

    return _make(out_data, (a,), bw)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g * (0.5 / out_data))

    return _make(out_data, (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g * (a.data > 0))

    return _make(out_data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def bw(g):
        if a.requires_grad:
            _acc_owned(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


def gelu(a) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    inner = x2 * (_GELU_C * _SQRT_2_OVER_PI)
    inner += _SQRT_2_OVER_PI
    inner *= x
    t = np.tanh(inner)
    half_1pt = 0.5 * (1.0 + t)
    out_data = (x * half_1pt).astype(x.dtype, copy=False)

    def bw(g):
        if a.requires_grad:
            # d/dx = 0.5*(1+t) + 0.5*x*(1-t^2)*sqrt(2/pi)*(1 + 3*0.044715*x^2)
            local = x2 * (3.0 * _GELU_C)
            local += 1.0
            local *= _SQRT_2_OVER_PI * 0.5
            local *= 1.0 - t * t
            local *= x
            local += half_1pt
            local *= g
            _acc_owned(a, local)

    return _make(out_data, (a,), bw)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero outside the interval."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def bw(g):
        if a.requires_grad:
            mask = (a.data >= lo) & (a.data <= hi)
            _acc_owned(a, (g * mask).astype(a.data.dtype, copy=False))

    return _make(out_data, (a,), bw)


def linear(x, w, b) -> Tensor:
    """x @ w + b in one graph node (b broadcast over leading dims)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"linear inner dimensions disagree: {x.shape} x {w.shape}")
    out_data = np.matmul(x.data, w.data)
    out_data += b.data

    def bw(g):
        if x.requires_grad:
            _acc_owned(x, np.matmul(g, w.data.T))
        if w.requires_grad:
            _acc_owned(w, np.matmul(x.data.reshape(-1, x.shape[-1]).T,
                                    g.reshape(-1, g.shape[-1])))
        if b.requires_grad:
            _acc_owned(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, (x, w, b), bw)


def linear_gelu(x, w, b) -> Tensor:
    """gelu(x @ w + b) fused into one node (the encoder's hot path)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"linear_gelu inner dimensions disagree: {x.shape} x {w.shape}")
    pre = np.matmul(x.data, w.data)
    pre += b.data
    p2 = pre * pre
    inner = p2 * (_GELU_C * _SQRT_2_OVER_PI)
    inner += _SQRT_2_OVER_PI
    inner *= pre
    t = np.tanh(inner)
    half_1pt = 0.5 * (1.0 + t)
    out_data = pre * half_1pt

    def bw(g):
        local = p2 * (3.0 * _GELU_C)
        local += 1.0
        local *= _SQRT_2_OVER_PI * 0.5
        local *= 1.0 - t * t
        local *= pre
        local += half_1pt
        local *= g  # d(out)/d(pre) * upstream
        if x.requires_grad:
            _acc_owned(x, np.matmul(local, w.data.T))
        if w.requires_grad:
            _acc_owned(w, np.matmul(x.data.reshape(-1, x.shape[-1]).T,
                                    local.reshape(-1, local.shape[-1])))
        if b.requires_grad:
            _acc_owned(b, local.reshape(-1, local.shape[-1]).sum(axis=0))

    return _make(out_data, (x, w, b), bw)


def linear_relu(x, w, b) -> Tensor:
    """relu(x @ w + b) fused into one node."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"linear_relu inner dimensions disagree: {x.shape} x {w.shape}")
    pre = np.matmul(x.data, w.data)
    pre += b.data
    out_data = np.maximum(pre, 0)

    def bw(g):
        local = g * (pre > 0)
        if x.requires_grad:
            _acc_owned(x, np.matmul(local, w.data.T))
        if w.requires_grad:
            _acc_owned(w, np.matmul(x.data.reshape(-1, x.shape[-1]).T,
                                    local.reshape(-1, local.shape[-1])))
        if b.requires_grad:
            _acc_owned(b, local.reshape(-1, local.shape[-1]).sum(axis=0))

    return _make(out_data, (x, w, b), bw)


# ---------------------------------------------------------------------------
# row-wise softmax / normalization


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, computed with row-max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            _acc_owned(a, out_data * (g - dot))

    return _make(out_data, (a,), bw)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs a last axis of extent >= 2, got {a.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _acc_owned(gain, (g * xhat).reshape(-1, d).sum(axis=0).astype(gain.data.dtype, copy=False))
        if bias.requires_grad:
            _acc_owned(bias, g.reshape(-1, d).sum(axis=0).astype(bias.data.dtype, copy=False))
        if a.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            _acc_owned(a, ((gy - m1 - xhat * m2) * inv).astype(a.data.dtype, copy=False))

    return _make(out_data, (a, gain, bias), bw)


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(logit, target, weights=None) -> Tensor:
    """Binary cross entropy on logits, overflow-safe.

    Per element: max(x, 0) - x*t + log(1 + exp(-|x|)).  Returns the mean
    (weighted mean when `weights` is given).  Targets must be 0 or 1.
    """
    logit = _as_tensor(logit)
    t = np.asarray(target, dtype=logit.dtype)
    if t.shape != logit.shape:
        t = np.broadcast_to(t, logit.shape)
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("bce_with_logits targets must be 0 or 1")
    x = logit.data
    elem = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    if weights is None:
        w = None
        denom = float(x.size)
        out_data = np.asarray(elem.sum() / denom, dtype=x.dtype)
    else:
        w = np.asarray(weights, dtype=x.dtype)
        if w.shape != x.shape:
            raise ShapeError(f"bce weights shape {w.shape} != logits shape {x.shape}")
        denom = max(float(w.sum()), 1e-12)
        out_data = np.asarray((elem * w).sum() / denom, dtype=x.dtype)

    def bw(g):
        if logit.requires_grad:
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                         np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            local = (s - t) / denom
            if w is not None:
                local = local * w
            _acc_owned(logit, (g * local).astype(x.dtype, copy=False))

    return _make(out_data, (logit,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            if axis is None:
                _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accumulate(a, np.broadcast_to(gg, a.shape).astype(a.dtype))

    return _make(out_data, (a,), bw)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def bw(g):
        if a.requires_grad:
            if axis is None:
                _accumulate(a, np.broadcast_to(g / count, a.shape).astype(a.dtype))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accumulate(a, np.broadcast_to(gg / count, a.shape).astype(a.dtype))

    return _make(out_data, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), bw)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    out_data = np.swapaxes(a.data, ax1, ax2).copy()

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _make(out_data, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bw(g):
        offset = 0
        for t, s in zip(ts, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + s)
                _accumulate(t, g[tuple(idx)])
            offset += s

    return _make(out_data, tuple(ts), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _acc_owned(a, full)

    return _make(out_data, (a,), bw)


def broadcast_rows(a, leading_shape) -> Tensor:
    """Broadcast a [1, ..., d] tensor across new leading dimensions."""
    a = _as_tensor(a)
    target = tuple(leading_shape) + a.shape[1:]
    out_data = np.broadcast_to(a.data, target).copy()

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# graph traversal


def _topo(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, clear_graph_first: bool = False):
    """Populate .grad for every requires_grad ancestor of a scalar loss.

    Gradients accumulate linearly across calls (each pass computes fresh
    contributions and adds them to whatever was already stored).  Pass
    ``clear_graph_first=True`` to discard every gradient reachable from
    `loss` instead, which is what training steps use and what lets a single
    forward graph serve several independent losses.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    # compute this pass on a clean slate so earlier gradients cannot be
    # re-propagated (which would compound them); restore-and-add afterwards
    stash = []
    for node in order:
        if node.grad is not None:
            if not clear_graph_first and node is not loss:
                stash.append((node, node.grad))
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node, old in stash:
        node.grad = old if node.grad is None else node.grad + old


def zero_grads(params):
    """Reset gradients (to zero) for a dict or iterable of Tensors."""
    it = params.values() if hasattr(params, "values") else params
    for t in it:
        t.grad = None


def check_finite(t: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise ValidationError(f"{what} contains non-finite values")
    return t
