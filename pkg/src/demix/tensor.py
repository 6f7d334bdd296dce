"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps a float32 or float64 ndarray.  Operations build a
computation graph of backward closures; calling :meth:`Tensor.backward` on a
scalar walks the graph in reverse topological order and accumulates gradients
into ``.grad`` (additively, so a value used twice receives both
contributions).  Image operations use NHWC layout, i.e. ``(batch, height,
width, channels)``.

Gradient flow can be cut with :func:`detach`.  For verification there is a
capture/replay mode (:func:`pin_detached`) that records every detached value
during one evaluation and replays the recorded constants during subsequent
evaluations, so that finite differences probe exactly the function the tape
differentiates.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or detected non-finite values."""


_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    """Set the dtype used when wrapping non-float data (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


# Detach capture/replay state: None, or dict with mode "record"/"replay",
# a list of recorded arrays and a cursor (replay only).
_pin_state = None


@contextlib.contextmanager
def pin_detached(mode: str, store: list | None = None):
    """Record or replay the values flowing through :func:`detach`.

    With ``mode="record"`` every detached array is appended to ``store``.
    With ``mode="replay"`` each :func:`detach` call returns the next array
    from ``store`` instead of its input, in call order.  Replaying a
    recorded evaluation makes all stop-gradient branches literal constants,
    which is what finite differences must see to agree with the tape.
    """
    global _pin_state
    if mode not in ("record", "replay"):
        raise ValueError(f"pin_detached mode must be 'record' or 'replay', got {mode!r}")
    if store is None:
        store = []
    prev = _pin_state
    _pin_state = {"mode": mode, "store": store, "cursor": 0}
    try:
        yield store
        if mode == "replay" and _pin_state["cursor"] != len(store):
            raise RuntimeError(
                f"detach replay consumed {_pin_state['cursor']} of {len(store)} recorded values"
            )
    finally:
        _pin_state = prev


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- graph plumbing -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy; treat as read-only)."""
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, free_graph: bool = True) -> None:
        """Backpropagate from a scalar.  Gradients accumulate into ``.grad``.

        By default the graph is dismantled afterwards so activations and
        cached buffers are released; pass ``free_graph=False`` to keep it
        (e.g. to call backward twice and check additive accumulation).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node._parents:
                node.grad = None  # scratch on op outputs; only leaves keep grads
            if free_graph and node is not self:
                node._backward = None
                node._parents = ()
        if free_graph:
            self._backward = None
            self._parents = ()

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def detach(self):
        return detach(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _out(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Build a graph node; collapses to a constant when grads are off."""
    req = _grad_enabled and any(p.requires_grad for p in parents)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = req
    if req:
        t._parents = tuple(p for p in parents if p.requires_grad)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=dtype)
    t.grad = None
    t.requires_grad = False
    t._backward = None
    t._parents = ()
    return t


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: operand shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and broadcasting ops ----------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast("add", a.data, b.data)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _out(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast("sub", a.data, b.data)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _out(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast("mul", a.data, b.data)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _out(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast("div", a.data, b.data)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _out(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = -a.data

    def backward(g):
        a._accum(-g)

    return _out(out_data, (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a python-scalar exponent."""
    a = _as_tensor(a)
    p = float(p)
    out_data = a.data**np.asarray(p, dtype=a.data.dtype)

    def backward(g):
        a._accum(g * p * a.data ** np.asarray(p - 1.0, dtype=a.data.dtype))

    return _out(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accum(g * out_data)

    return _out(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accum(g / a.data)

    return _out(out_data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accum(g / (2.0 * out_data))

    return _out(out_data, (a,), backward)


def clip_min(a: Tensor, lo: float) -> Tensor:
    """Elementwise max(a, lo); gradient is zero where the floor is active."""
    a = _as_tensor(a)
    out_data = np.maximum(a.data, np.asarray(lo, dtype=a.data.dtype))

    def backward(g):
        a._accum(g * (a.data > lo))

    return _out(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        a._accum(g * (a.data > 0))

    return _out(out_data, (a,), backward)


# -- reductions, shaping, indexing --------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, in_shape))

    return _out(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape
    count = a.data.size // max(out_data.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, in_shape) / np.asarray(count, dtype=a.data.dtype))

    return _out(out_data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accum(g.reshape(in_shape))

    return _out(out_data, (a,), backward)


def transpose_nchw_to_nhwc(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H, W, C)."""
    a = _as_tensor(a)
    if a.ndim != 4:
        raise ShapeError(f"transpose_nchw_to_nhwc: expected 4-d input, got shape {a.shape}")
    out_data = np.ascontiguousarray(a.data.transpose(0, 2, 3, 1))

    def backward(g):
        a._accum(np.ascontiguousarray(g.transpose(0, 3, 1, 2)))

    return _out(out_data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    base = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(base) or any(
            i != (axis % len(base)) and s[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(
                f"concat: shapes {base} and {s} differ outside axis {axis}"
            )
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _out(out_data, tuple(tensors), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.shape} and {b.shape} (expect (n,k)@(k,m))"
        )
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _out(out_data, (a, b), backward)


def gather(a: Tensor, index: np.ndarray, axis: int = 1) -> Tensor:
    """Pick one entry per row: ``out[i] = a[i, index[i]]`` for axis=1."""
    a = _as_tensor(a)
    if axis != 1 or a.ndim != 2:
        raise ShapeError(f"gather: only axis=1 on 2-d input supported, got shape {a.shape}")
    index = np.asarray(index)
    if index.ndim != 1 or index.shape[0] != a.shape[0]:
        raise ShapeError(
            f"gather: index shape {index.shape} does not match rows of {a.shape}"
        )
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, index]

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, (rows, index), g)
        a._accum(gx)

    return _out(out_data, (a,), backward)


def index_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along axis 0 (duplicate indices allowed)."""
    a = _as_tensor(a)
    index = np.asarray(index)
    out_data = a.data[index]

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, index, g)
        a._accum(gx)

    return _out(out_data, (a,), backward)


def detach(a: Tensor) -> Tensor:
    """Cut gradient flow.  Honours :func:`pin_detached` capture/replay."""
    a = _as_tensor(a)
    data = a.data
    if _pin_state is not None:
        if _pin_state["mode"] == "record":
            _pin_state["store"].append(data.copy())
        else:
            data = _pin_state["store"][_pin_state["cursor"]]
            _pin_state["cursor"] += 1
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t._backward = None
    t._parents = ()
    return t


# -- softmax family -----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accum(out_data * (g - dot))

    return _out(out_data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def backward(g):
        a._accum(g - probs * g.sum(axis=axis, keepdims=True))

    return _out(out_data, (a,), backward)


# -- image ops (NHWC) ---------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
    )
    return np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, NHWC input, weight shaped (kh, kw, c_in, c_out)."""
    x = _as_tensor(x)
    w = _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {w.shape}")
    n, h, ww_in, c = x.shape
    kh, kw, ci, co = w.shape
    if ci != c:
        raise ShapeError(
            f"conv2d: input channels {x.shape} do not match weight {w.shape}"
        )
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (co,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {co} output channels")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww_in + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d: kernel {w.shape} does not fit input {x.shape} with stride {stride}, padding {padding}"
        )
    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(kh * kw * c, co)
    out_flat = cols @ wmat
    if b is not None:
        out_flat += b.data
    out_data = out_flat.reshape(n, ho, wo, co)
    pH, pW = xp.shape[1], xp.shape[2]

    def backward(g):
        gflat = g.reshape(n * ho * wo, co)
        if w.requires_grad:
            w._accum((cols.T @ gflat).reshape(kh, kw, c, co))
        if b is not None and b.requires_grad:
            b._accum(gflat.sum(axis=0))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros((n, pH, pW, c), dtype=x.data.dtype)
            for i in range(kh):
                hi = i + stride * ho
                for j in range(kw):
                    wj = j + stride * wo
                    dxp[:, i:hi:stride, j:wj:stride, :] += dcols[:, :, :, i, j, :]
            if padding:
                dxp = dxp[:, padding:padding + h, padding:padding + ww_in, :]
            x._accum(dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _out(out_data, parents, backward)


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling over NHWC input; padded cells never win (filled with -inf)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4-d input, got shape {x.shape}")
    n, h, w, c = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"max_pool2d: window {kernel} does not fit input {x.shape} with stride {stride}, padding {padding}"
        )
    if padding:
        xp = np.pad(
            x.data,
            ((0, 0), (padding, padding), (padding, padding), (0, 0)),
            constant_values=-np.inf,
        )
    else:
        xp = x.data
    sn, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, kernel, kernel, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
    )
    windows = view.reshape(n, ho, wo, kernel * kernel, c)
    arg = windows.argmax(axis=3)
    out_data = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    pH, pW = xp.shape[1], xp.shape[2]

    def backward(g):
        dxp = np.zeros((n, pH, pW, c), dtype=x.data.dtype)
        for i in range(kernel):
            hi = i + stride * ho
            for j in range(kernel):
                wj = j + stride * wo
                mask = arg == (i * kernel + j)
                dxp[:, i:hi:stride, j:wj:stride, :] += g * mask
        if padding:
            dxp = dxp[:, padding:padding + h, padding:padding + w, :]
        x._accum(dxp)

    return _out(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Adaptive average pool to 1x1 then squeeze: (N,H,W,C) -> (N,C)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-d input, got shape {x.shape}")
    return tmean(x, axis=(1, 2))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over NHWC input.

    In training mode statistics come from the batch and the running buffers
    are updated in place (biased variance, as the batch statistic).  In eval
    mode the running buffers are used and the op is a per-channel affine map.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected 4-d input, got shape {x.shape}")
    c = x.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batch_norm: scale/shift shapes {gamma.shape}/{beta.shape} do not match {c} channels"
        )
    axes = (0, 1, 2)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    ivar = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mu) * ivar
    out_data = gamma.data * xhat + beta.data
    nred = x.data.size // c

    def backward(g):
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if x.requires_grad:
            if training:
                gsum = g.sum(axis=axes)
                gxhat = (g * xhat).sum(axis=axes)
                dx = (gamma.data * ivar / nred) * (nred * g - gsum - xhat * gxhat)
            else:
                dx = g * (gamma.data * ivar)
            x._accum(dx)

    return _out(out_data, (x, gamma, beta), backward)


def euclidean_distance(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Euclidean distance along an axis, smoothed at zero so the gradient stays finite."""
    d = sub(a, b)
    ss = tsum(mul(d, d), axis=axis)
    return sqrt(add(ss, eps))


# -- verification -------------------------------------------------------------


def finite_difference_check(f, x: Tensor, step: float = 1e-3) -> float:
    """Compare tape gradients of scalar ``f(x)`` against central differences.

    Detached values observed on the analytic pass are pinned and replayed
    during the perturbed evaluations, so stop-gradient branches are held
    constant exactly as the tape treats them.  Returns the maximum relative
    error ``|a - n| / (|a| + |n| + 1e-8)`` over all coordinates of ``x``.
    """
    if not x.requires_grad:
        raise ValueError("finite_difference_check: x must require gradients")
    store: list = []
    x.zero_grad()
    with pin_detached("record", store):
        out = f(x)
    if out.size != 1:
        raise ValueError(f"finite_difference_check: f must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = x.grad.astype(np.float64).ravel().copy()

    flat = x.data.ravel()
    numeric = np.empty(flat.size, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with pin_detached("replay", store):
                fp = f(x).item()
            flat[i] = orig - step
            with pin_detached("replay", store):
                fm = f(x).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"finite_difference_check: non-finite loss at coordinate {i}"
                )
            numeric[i] = (fp - fm) / (2.0 * step)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    return float(err.max()) if err.size else 0.0


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite values detected")
