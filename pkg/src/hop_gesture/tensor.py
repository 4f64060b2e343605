"""Dense float64 tensors with reverse-mode differentiation.

Every op builds its output through ``_result`` which records the parents and
a closure mapping the output gradient to one gradient per parent.  Ops are
registered in ``OPS`` so the test-suite can gradient-check all of them.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "OPS", "no_grad", "checked", "is_checked",
    "ShapeError", "BackwardError", "NonFiniteError", "ParameterError",
    "tensor", "zeros", "ones",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class BackwardError(RuntimeError):
    """Backward pass contract violated (non-scalar loss, stale grads, detached graph)."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf while checked mode was active."""

    def __init__(self, op: str, shape):
        super().__init__(f"non-finite values produced by op '{op}' (output shape {tuple(shape)})")
        self.op = op


class ParameterError(ValueError):
    """Invalid non-tensor argument to an op (dilation, filter length, ...)."""


_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_checked = contextvars.ContextVar("checked", default=False)


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Raise ``NonFiniteError`` naming the first op whose output is not finite."""
    token = _checked.set(enabled)
    try:
        if enabled:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                yield
        else:
            yield
    finally:
        _checked.reset(token)


def is_checked() -> bool:
    return _checked.get()


OPS: dict[str, Callable] = {}


def register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t.op = "leaf"
        t.name = None
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes if axes else None)

    # -- reverse mode -------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad leaf reachable from this scalar.

        Leaves must have no stored gradient: gradients are never silently
        accumulated across calls, call ``zero_grad`` between passes.
        """
        if self.data.ndim != 0:
            raise BackwardError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad or self._backward is None:
            raise BackwardError("loss is detached from every differentiable leaf; nothing to traverse")
        order = _topological(self)
        leaves = [n for n in order if n._backward is None]
        stale = [n for n in leaves if n.grad is not None]
        if stale:
            names = ", ".join(n.name or repr(n) for n in stale[:3])
            raise BackwardError(f"gradient already populated on {names}; reset with zero_grad() before a second backward")
        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise BackwardError(f"op '{node.op}' produced grad {pg.shape} for parent {p.data.shape}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if _checked.get() and not np.all(np.isfinite(data)):
        raise NonFiniteError(op, data.shape)
    out = Tensor._wrap(data)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


@register("add")
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


@register("sub")
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


@register("mul")
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


@register("div")
def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _result("div", out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)))


@register("neg")
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


@register("power")
def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _result("power", a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


@register("exp")
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


@register("expm1")
def expm1(a) -> Tensor:
    """exp(a) - 1 without cancellation near zero."""
    a = as_tensor(a)
    return _result("expm1", np.expm1(a.data), (a,), lambda g: (g * np.exp(a.data),))


@register("log")
def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result("log", out, (a,), lambda g: (g / a.data,))


@register("sqrt")
def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


@register("tanh")
def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@register("sigmoid")
def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


@register("relu")
def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    a = as_tensor(a)
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


@register("clamp")
def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    a = as_tensor(a)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    mask = (a.data > lo_v) & (a.data < hi_v)
    return _result("clamp", np.clip(a.data, lo_v, hi_v), (a,), lambda g: (g * mask,))


@register("smooth_l1")
def smooth_l1(a, delta: float = 1.0) -> Tensor:
    """Elementwise Huber: r^2/(2 delta) inside |r| < delta, |r| - delta/2 outside."""
    if delta <= 0:
        raise ParameterError(f"huber delta must be positive, got {delta}")
    a = as_tensor(a)
    r = a.data
    ar = np.abs(r)
    out = np.where(ar < delta, 0.5 * r * r / delta, ar - 0.5 * delta)
    return _result("smooth_l1", out, (a,), lambda g: (g * np.clip(r / delta, -1.0, 1.0),))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


@register("sum")
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


@register("mean")
def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g / n, a.shape).copy(),)
    return _result("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


@register("reshape")
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


@register("transpose")
def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


@register("broadcast_to")
def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None
    return _result("broadcast_to", out, (a,), lambda g: (unbroadcast(g, a.shape),))


@register("getitem")
def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _result("getitem", np.array(out, dtype=np.float64), (a,), bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(None, None, -1)
    return getitem(a, tuple(idx))


@register("concat")
def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat along axis {axis}: {[t.shape for t in ts]}: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _result("concat", out, ts, bw)


@register("stack")
def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {[t.shape for t in ts]}: {exc}") from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))
    return _result("stack", out, ts, bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

@register("matmul")
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb
    return _result("matmul", out, (a, b), bw)


@register("softmax")
def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _norm_axes(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result("softmax", out, (a,), bw)


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------

def causal_output_times(length: int, stride: int) -> np.ndarray:
    """Input time index read by each strided causal output: the last sample of each stride block."""
    n_out = length // stride
    if n_out < 1:
        raise ParameterError(f"stride {stride} longer than sequence {length}")
    return stride - 1 + stride * np.arange(n_out)


@register("causal_conv")
def causal_conv(x, w, dilation: int = 1, stride: int = 1) -> Tensor:
    """Dilated causal convolution along axis 1, channels on the last axis.

    x: (B, T, ..., C_in), w: (K, C_in, C_out).  Output position j reads time
    t_j = stride-1 + j*stride and computes sum_i x[t_j - dilation*i] @ w[i],
    out-of-range samples being zero (left padding).
    """
    x, w = as_tensor(x), as_tensor(w)
    if dilation < 1 or stride < 1:
        raise ParameterError(f"dilation and stride must be >= 1, got {dilation}, {stride}")
    if w.ndim != 3 or w.shape[0] < 1:
        raise ParameterError(f"filter must be (K, C_in, C_out) with K >= 1, got {w.shape}")
    if x.ndim < 3 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"causal_conv channel mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[0]
    pad = dilation * (k - 1)
    t_len = x.shape[1]
    times = causal_output_times(t_len, stride)
    xp = np.concatenate([np.zeros((x.shape[0], pad) + x.shape[2:]), x.data], axis=1) if pad else x.data
    taps = [times + pad - dilation * i for i in range(k)]
    out = sum(np.take(xp, taps[i], axis=1) @ w.data[i] for i in range(k))

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape)
            for i in range(k):
                gxp[:, taps[i]] += g @ w.data[i].T
            gx = gxp[:, pad:]
        if w.requires_grad:
            lead = tuple(range(g.ndim - 1))
            gw = np.stack([np.tensordot(np.take(xp, taps[i], axis=1), g, axes=(lead, lead)) for i in range(k)])
        return gx, gw
    return _result("causal_conv", out, (x, w), bw)


@register("dilated_causal_conv1d")
def dilated_causal_conv1d(x, f, d: int) -> Tensor:
    """Single-channel y_t = sum_i f_i x_{t - d*i}; output length equals input length."""
    x, f = as_tensor(x), as_tensor(f)
    if d < 1:
        raise ParameterError(f"dilation must be >= 1, got {d}")
    if f.ndim != 1 or f.shape[0] < 1:
        raise ParameterError(f"filter must be a non-empty vector, got shape {f.shape}")
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got {x.shape}")
    y = causal_conv(reshape(x, (1, x.shape[0], 1)), reshape(f, (f.shape[0], 1, 1)), dilation=d)
    return reshape(y, (x.shape[0],))


# ---------------------------------------------------------------------------
# fused recurrent cell
# ---------------------------------------------------------------------------

@register("gru")
def gru(x, h0, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Unrolled GRU over axis 1 of x (B, T, I); returns all hidden states (B, T, H).

    Gate layout along the 3H axis is (reset, update, candidate):
        r = sig(x W_ir + b_ir + h W_hr + b_hr)
        z = sig(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h
    """
    x, h0, w_ih, w_hh, b_ih, b_hh = (as_tensor(t) for t in (x, h0, w_ih, w_hh, b_ih, b_hh))
    bsz, steps, n_in = x.shape
    hid = w_hh.shape[0]
    if w_ih.shape != (n_in, 3 * hid) or w_hh.shape != (hid, 3 * hid) or h0.shape != (bsz, hid) \
            or b_ih.shape != (3 * hid,) or b_hh.shape != (3 * hid,):
        raise ShapeError(f"gru shapes: x {x.shape}, h0 {h0.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, "
                         f"b_ih {b_ih.shape}, b_hh {b_hh.shape}")
    ax = x.data @ w_ih.data + b_ih.data
    hs = np.empty((bsz, steps, hid))
    cache = []
    h = h0.data
    for t in range(steps):
        ah = h @ w_hh.data + b_hh.data
        r = _sigmoid(ax[:, t, :hid] + ah[:, :hid])
        z = _sigmoid(ax[:, t, hid:2 * hid] + ah[:, hid:2 * hid])
        hn = ah[:, 2 * hid:]
        n = np.tanh(ax[:, t, 2 * hid:] + r * hn)
        cache.append((h, r, z, n, hn))
        h = (1.0 - z) * n + z * h
        hs[:, t] = h

    def bw(g):
        d_ax = np.empty_like(ax)
        gw_hh = np.zeros(w_hh.shape)
        gb_hh = np.zeros(b_hh.shape)
        dh_next = np.zeros((bsz, hid))
        wt = w_hh.data.T
        for t in reversed(range(steps)):
            h_prev, r, z, n, hn = cache[t]
            dh = g[:, t] + dh_next
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dr = dn * hn * r * (1.0 - r)
            d_ah = np.concatenate([dr, dz, dn * r], axis=1)
            d_ax[:, t] = np.concatenate([dr, dz, dn], axis=1)
            gw_hh += h_prev.T @ d_ah
            gb_hh += d_ah.sum(axis=0)
            dh_next = dh * z + d_ah @ wt
        flat = d_ax.reshape(-1, 3 * hid)
        gx = (d_ax @ w_ih.data.T) if x.requires_grad else None
        gw_ih = x.data.reshape(-1, n_in).T @ flat
        gb_ih = flat.sum(axis=0)
        return gx, dh_next, gw_ih, gw_hh, gb_ih, gb_hh
    return _result("gru", hs, (x, h0, w_ih, w_hh, b_ih, b_hh), bw)


# ---------------------------------------------------------------------------
# direction-vector normalisation
# ---------------------------------------------------------------------------

@register("unit_vectors")
def unit_vectors(a, fallback, eps: float = 1e-8) -> Tensor:
    """Normalise along the last axis; vectors with norm <= eps become ``fallback``."""
    a = as_tensor(a)
    fb = np.broadcast_to(np.asarray(fallback.data if isinstance(fallback, Tensor) else fallback,
                                    dtype=np.float64), a.shape)
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    ok = norm > eps
    safe = np.where(ok, norm, 1.0)
    u = a.data / safe
    out = np.where(ok, u, fb)

    def bw(g):
        proj = (g * u).sum(axis=-1, keepdims=True)
        return (np.where(ok, (g - u * proj) / safe, 0.0),)
    return _result("unit_vectors", out, (a,), bw)
