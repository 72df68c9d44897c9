"""Reverse-mode automatic differentiation on numpy arrays.

A small tensor-graph engine sized for this project.  A ``Tensor`` wraps an
ndarray and records the parents and backward closure of the op that produced
it; calling ``backward()`` on a scalar root walks the graph in reverse
topological order, accumulating gradients additively wherever a value fans
out into several consumers.

Two process-wide switches configure numerics:

* precision: ``"float32"`` (training default) or ``"float64"`` (used by the
  finite-difference gradient checker).  Tensors are cast on construction.
* conv mode: ``"fast"`` lowers convolutions to an im2col patch matrix and one
  BLAS matmul; ``"sequential"`` accumulates one kernel tap at a time in a
  fixed (channel, then kernel offsets in row-major order) sequence, so every
  output element is exactly the ordered float sum a naive nested loop
  produces.  Sequential mode costs roughly 10x more and exists so that
  deterministic runs and reference-implementation tests can demand
  bit-identical forward results.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "set_precision",
    "get_precision",
    "current_dtype",
    "precision",
    "set_conv_mode",
    "get_conv_mode",
    "conv_mode",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "matmul",
    "affine",
    "relu",
    "conv2d",
    "conv3d",
    "pool",
    "cell_cosine",
    "softmax_cross_entropy",
    "stack",
    "transpose",
    "zero_norm_cell_count",
    "reset_zero_norm_cell_count",
]

_DTYPES = {"float32": np.float32, "float64": np.float64}

_precision = "float32"
_conv_mode = "fast"
_grad_enabled = True


def set_precision(name: str) -> None:
    global _precision
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    _precision = name


def get_precision() -> str:
    return _precision


def current_dtype():
    return _DTYPES[_precision]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global float precision."""
    global _precision
    old = _precision
    set_precision(name)
    try:
        yield
    finally:
        _precision = old


def set_conv_mode(name: str) -> None:
    global _conv_mode
    if name not in ("fast", "sequential"):
        raise ValueError(f"unknown conv mode {name!r}, expected 'fast' or 'sequential'")
    _conv_mode = name


def get_conv_mode() -> str:
    return _conv_mode


@contextlib.contextmanager
def conv_mode(name: str):
    """Temporarily switch the convolution reduction mode."""
    global _conv_mode
    old = _conv_mode
    set_conv_mode(name)
    try:
        yield
    finally:
        _conv_mode = old


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An ndarray plus the graph edge that produced it.

    Leaves are either parameters (``requires_grad=True``) or data constants.
    Interior nodes require grad iff any parent does; when no parent does, or
    grads are globally disabled, the parent edges are dropped entirely so
    constant subgraphs cost nothing at backward time.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable | None = None,
    ):
        self.data = np.asarray(data, dtype=current_dtype())
        self.grad: np.ndarray | None = None
        if _parents and _grad_enabled and any(p.requires_grad for p in _parents):
            self.requires_grad = True
            self._parents = tuple(_parents)
            self._backward = _backward
        else:
            self.requires_grad = bool(requires_grad) and not _parents
            self._parents = ()
            self._backward = None

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

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Backpropagate from this scalar root through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- operator sugar -----------------------------------------------------

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

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return _reduce(self, np.sum, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _reduce(self, np.mean, axis, keepdims)

    def reshape(self, *shape):
        return _reshape(self, shape)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting expanded it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(gy):
        return _unbroadcast(gy, a.data.shape), _unbroadcast(gy, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(gy):
        return _unbroadcast(gy, a.data.shape), _unbroadcast(-gy, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(gy):
        return (
            _unbroadcast(gy * b.data, a.data.shape),
            _unbroadcast(gy * a.data, b.data.shape),
        )

    return Tensor(out, _parents=(a, b), _backward=bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(gy):
        return gy @ b.data.T, a.data.T @ gy

    return Tensor(out, _parents=(a, b), _backward=bw)


def affine(x, w, b) -> Tensor:
    """weight @ x + bias with weight shaped (out, in).

    Accepts a single length-``in`` vector or a (B, in) batch; the output is a
    length-``out`` vector or a (B, out) batch correspondingly.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2:
        raise ValueError(f"affine weight must be (out, in), got {w.shape}")
    single = x.ndim == 1
    if single:
        x = x.reshape(1, x.shape[0])
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"affine input {x.shape} does not match weight {w.shape}")
    out = add(matmul(x, _transpose2d(w)), b)
    return out.reshape(w.shape[0]) if single else out


def _transpose2d(x: Tensor) -> Tensor:
    out = x.data.T

    def bw(gy):
        return (gy.T,)

    return Tensor(out, _parents=(x,), _backward=bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def bw(gy):
        return (gy * (x.data > 0),)

    return Tensor(out, _parents=(x,), _backward=bw)


def _reshape(x: Tensor, shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.data.reshape(shape)

    def bw(gy):
        return (gy.reshape(x.data.shape),)

    return Tensor(out, _parents=(x,), _backward=bw)


def _getitem(x: Tensor, index) -> Tensor:
    # basic indexing only: ints and slices never alias the same input cell twice
    out = x.data[index]

    def bw(gy):
        g = np.zeros_like(x.data)
        g[index] += gy
        return (g,)

    return Tensor(out, _parents=(x,), _backward=bw)


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _reduce(x: Tensor, fn, axis, keepdims: bool) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    # full reductions go through axis=None so the result is bit-identical to
    # a direct np.sum/np.mean call on the same buffer
    np_axis = None if len(axes) == x.ndim else axes
    out = fn(x.data, axis=np_axis, keepdims=keepdims)
    n = 1
    for a in axes:
        n *= x.data.shape[a]
    scale = 1.0 / n if fn is np.mean else 1.0

    def bw(gy):
        g = gy
        if not keepdims:
            g = np.expand_dims(g, axes)
        g = np.broadcast_to(g * scale if scale != 1.0 else g, x.data.shape)
        return (g,)

    return Tensor(out, _parents=(x,), _backward=bw)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def bw(gy):
        return (np.transpose(gy, inverse),)

    return Tensor(out, _parents=(x,), _backward=bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(gy):
        return tuple(np.take(gy, i, axis=axis) for i in range(len(ts)))

    return Tensor(out, _parents=tuple(ts), _backward=bw)


# -- convolution ----------------------------------------------------------


def _norm_tuple(value, n: int, name: str) -> tuple:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * n
    t = tuple(int(v) for v in value)
    if len(t) != n:
        raise ValueError(f"{name} must have {n} entries, got {t}")
    return t


def _im2col(xp: np.ndarray, ksize: tuple, out_sp: tuple, stride: tuple) -> np.ndarray:
    """Flatten padded input into an (B*prod(out), cin*prod(k)) patch matrix."""
    nd = len(ksize)
    win = np.lib.stride_tricks.sliding_window_view(
        xp, ksize, axis=tuple(range(2, 2 + nd))
    )
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    win = np.moveaxis(win, 1, 1 + nd)  # (B, *out, cin, *k)
    rows = xp.shape[0] * int(np.prod(out_sp))
    return win.reshape(rows, -1)


def _conv_forward_fast(xp, w, bias, out_sp, stride):
    cout = w.shape[0]
    col = _im2col(xp, w.shape[2:], out_sp, stride)
    y = col @ w.reshape(cout, -1).T
    y = y.reshape((xp.shape[0],) + out_sp + (cout,))
    y = np.ascontiguousarray(np.moveaxis(y, -1, 1))
    if bias is not None:
        y += bias.reshape((1, cout) + (1,) * len(out_sp))
    return y


def _conv_forward_sequential(xp, w, bias, out_sp, stride):
    # one kernel tap at a time, (cin, *k) order: per output element this is
    # the exact float addition sequence of the naive nested-loop definition
    nd = len(out_sp)
    cout, cin = w.shape[0], w.shape[1]
    ksize = w.shape[2:]
    y = np.zeros((xp.shape[0], cout) + out_sp, dtype=xp.dtype)
    if bias is not None:
        y += bias.reshape((1, cout) + (1,) * nd)
    wshape = (cout,) + (1,) * nd
    for ci in range(cin):
        for tap in np.ndindex(*ksize):
            sl = tuple(
                slice(tap[i], tap[i] + stride[i] * out_sp[i], stride[i])
                for i in range(nd)
            )
            patch = xp[(slice(None), ci) + sl]
            y += patch[:, None] * w[(slice(None), ci) + tap].reshape(wshape)
    return y


def _conv(x, w, b, stride, pad, nd: int) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim == nd + 1:
        # single example (C, spatial...): run batched and strip the batch axis
        y = _conv(x.reshape((1,) + x.shape), w, b, stride, pad, nd)
        return y.reshape(y.shape[1:])
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ValueError(
            f"conv{nd}d expects (C, spatial...) input (optionally batched) and "
            f"(Cout, Cin, k...) weights, got {x.shape} and {w.shape}"
        )
    cout, cin = w.shape[0], w.shape[1]
    if x.shape[1] != cin:
        raise ValueError(
            f"channel axis mismatch: input has {x.shape[1]} channels, weights expect {cin}"
        )
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} output channels")
    stride = _norm_tuple(stride, nd, "stride")
    pad = _norm_tuple(pad, nd, "pad")
    ksize = w.shape[2:]
    spatial = x.shape[2:]
    for i in range(nd):
        if spatial[i] + 2 * pad[i] < ksize[i]:
            raise ValueError(
                f"spatial axis {i}: padded extent {spatial[i] + 2 * pad[i]} is "
                f"smaller than kernel extent {ksize[i]}"
            )
    out_sp = tuple(
        (spatial[i] + 2 * pad[i] - ksize[i]) // stride[i] + 1 for i in range(nd)
    )

    if any(pad):
        xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))
    else:
        xp = x.data
    forward = _conv_forward_fast if _conv_mode == "fast" else _conv_forward_sequential
    y = forward(xp, w.data, b.data if b is not None else None, out_sp, stride)

    def bw(gy):
        gyf = np.moveaxis(gy, 1, -1).reshape(-1, cout)
        col = _im2col(xp, ksize, out_sp, stride)
        gw = (gyf.T @ col).reshape(w.data.shape)
        gb = gy.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b is not None else None
        gx = None
        if x.requires_grad:
            gcol = gyf @ w.data.reshape(cout, -1)
            gcol = gcol.reshape((xp.shape[0],) + out_sp + (cin,) + ksize)
            gcol = np.moveaxis(gcol, nd + 1, 1)  # (B, cin, *out, *k)
            gxp = np.zeros_like(xp)
            head = (slice(None), slice(None))
            for tap in np.ndindex(*ksize):
                sl = tuple(
                    slice(tap[i], tap[i] + stride[i] * out_sp[i], stride[i])
                    for i in range(nd)
                )
                gxp[head + sl] += gcol[head + (slice(None),) * nd + tap]
            if any(pad):
                gx = gxp[head + tuple(slice(pad[i], pad[i] + spatial[i]) for i in range(nd))]
            else:
                gx = gxp
        if b is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor(y, _parents=parents, _backward=bw)


def conv2d(x, w, b=None, stride=1, pad=0) -> Tensor:
    """2-d convolution over (B, C, H, W) input, weights (Cout, Cin, kh, kw)."""
    return _conv(x, w, b, stride, pad, 2)


def conv3d(x, w, b=None, stride=1, pad=0) -> Tensor:
    """3-d convolution over (B, C, D, H, W) input, weights (Cout, Cin, kd, kh, kw)."""
    return _conv(x, w, b, stride, pad, 3)


# -- pooling ---------------------------------------------------------------


def pool(x, window, stride=None, kind: str = "mean") -> Tensor:
    """Window pooling over the trailing ``len(window)`` axes.

    ``stride`` defaults to the window (non-overlapping).  If every pooled
    output axis has size 1 the singleton axes are dropped, so a full-extent
    mean pool maps (B, C, H, W) straight to (B, C).  Max pooling routes each
    window's gradient to the first maximal element in row-major order.
    """
    if kind not in ("mean", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    x = as_tensor(x)
    window = tuple(int(w) for w in window)
    nd = len(window)
    if nd < 1 or nd > x.ndim:
        raise ValueError(f"window {window} does not fit input of rank {x.ndim}")
    stride = window if stride is None else _norm_tuple(stride, nd, "stride")
    spatial = x.shape[-nd:]
    out_sp = tuple((spatial[i] - window[i]) // stride[i] + 1 for i in range(nd))
    if any(o < 1 for o in out_sp):
        raise ValueError(f"pool window {window} exceeds input extent {spatial}")
    lead = x.shape[:-nd]

    win = np.lib.stride_tricks.sliding_window_view(
        x.data, window, axis=tuple(range(x.ndim - nd, x.ndim))
    )
    win = win[(slice(None),) * len(lead) + tuple(slice(None, None, s) for s in stride)]
    if kind == "mean":
        # accumulate one window tap at a time in row-major order, then divide:
        # per output element this is exactly the naive loop's float sequence
        y = np.zeros(lead + out_sp, dtype=x.data.dtype)
        tap_head = (slice(None),) * (len(lead) + nd)
        for tap in np.ndindex(*window):
            y += win[tap_head + tap]
        y = y / int(np.prod(window))
    else:
        y = np.max(win, axis=tuple(range(win.ndim - nd, win.ndim)))
    squeeze = all(o == 1 for o in out_sp)
    out = y.reshape(lead) if squeeze else y

    head = (slice(None),) * len(lead)

    def bw(gy):
        g = gy.reshape(lead + out_sp) if squeeze else gy
        gx = np.zeros_like(x.data)
        if kind == "mean":
            share = g * (1.0 / np.prod(window))
            for tap in np.ndindex(*window):
                sl = tuple(
                    slice(tap[i], tap[i] + stride[i] * out_sp[i], stride[i])
                    for i in range(nd)
                )
                gx[head + sl] += share
        else:
            routed = np.zeros(lead + out_sp, dtype=bool)
            for tap in np.ndindex(*window):
                sel = (win[head + (slice(None),) * nd + tap] == y) & ~routed
                if not sel.any():
                    continue
                sl = tuple(
                    slice(tap[i], tap[i] + stride[i] * out_sp[i], stride[i])
                    for i in range(nd)
                )
                view = gx[head + sl]
                view[sel] += g[sel]
                routed |= sel
        return (gx,)

    return Tensor(out, _parents=(x,), _backward=bw)


# -- fused ops -------------------------------------------------------------

_zero_norm_cells = 0


def zero_norm_cell_count() -> int:
    """How many zero-norm cells have been scored as 0 since the last reset."""
    return _zero_norm_cells


def reset_zero_norm_cell_count() -> None:
    global _zero_norm_cells
    _zero_norm_cells = 0


def cell_cosine(h, z) -> Tensor:
    """Per-cell cosine similarity between two feature grids.

    Inputs share a (..., C, H, W) layout; the channel axis is reduced, giving
    a (..., H, W) map of cosines.  A cell where either vector has zero norm
    scores 0 and passes no gradient.
    """
    h, z = as_tensor(h), as_tensor(z)
    if h.shape != z.shape:
        raise ValueError(f"grid shapes differ: {h.shape} vs {z.shape}")
    if h.ndim < 3:
        raise ValueError(f"expected (..., C, H, W) grids, got {h.shape}")
    num = np.sum(h.data * z.data, axis=-3)
    hh = np.sum(h.data * h.data, axis=-3)
    zz = np.sum(z.data * z.data, axis=-3)
    denom = np.sqrt(hh) * np.sqrt(zz)
    mask = denom > 0
    bad = mask.size - int(np.count_nonzero(mask))
    if bad:
        global _zero_norm_cells
        _zero_norm_cells += bad
    safe = np.where(mask, denom, 1)
    cos = np.where(mask, num / safe, 0).astype(h.data.dtype)

    def bw(gy):
        gm = np.expand_dims(gy * mask / safe, -3)
        ce = np.expand_dims(cos, -3)
        hh_safe = np.expand_dims(np.where(hh > 0, hh, 1), -3)
        zz_safe = np.expand_dims(np.where(zz > 0, zz, 1), -3)
        de = np.expand_dims(safe, -3)
        gh = gm * (z.data - ce * de * h.data / hh_safe)
        gz = gm * (h.data - ce * de * z.data / zz_safe)
        return gh, gz

    return Tensor(cos, _parents=(h, z), _backward=bw)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray):
    """Mean cross-entropy of row-softmax vs integer labels.

    Returns ``(loss, probs)`` where ``loss`` is a scalar Tensor and ``probs``
    the (B, K) softmax as a plain ndarray for metric bookkeeping.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        loss, probs = softmax_cross_entropy(
            logits.reshape(1, logits.shape[0]), np.asarray([labels], dtype=np.int64)
        )
        return loss, probs[0]
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(
            f"expected (B, K) logits and (B,) labels, got {logits.shape} and {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(
            f"label out of range: got {int(labels.min())}..{int(labels.max())} "
            f"for {logits.shape[1]} classes"
        )
    n = logits.shape[0]
    rows = np.arange(n)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - lse
    loss = np.mean(-logp[rows, labels])
    probs = np.exp(logp)

    def bw(gy):
        g = probs.copy()
        g[rows, labels] -= 1
        g *= gy / n
        return (g,)

    return Tensor(loss, _parents=(logits,), _backward=bw), probs
