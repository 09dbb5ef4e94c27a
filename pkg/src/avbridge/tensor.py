"""Minimal reverse-mode autodiff over dense numpy arrays.

Design notes:
  * Row-major (C-contiguous) storage, float32 or float64 only.
  * No general broadcasting. The only shape-mixing rule is trailing-axis
    addition: ``(..., *s) + (*s,)`` (bias and positional-embedding adds).
  * Every op validates that its result is finite and raises otherwise.
  * matmul multiplies are counted globally (``mul_scope``) so analytic
    FLOP models can be checked against instrumented forwards exactly.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "param",
    "zeros",
    "no_grad",
    "is_grad_enabled",
    "mul_scope",
    "matmul",
    "softmax",
    "layer_norm",
    "scaled_dot_attention",
    "backward",
    "grad_check",
]

_DTYPES = (np.float32, np.float64)

MASK_NEG = -1e30  # additive score for masked attention entries


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class _State:
    grad_enabled = True
    finite_checks = True
    matmul_multiplies = 0


_state = _State()


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def is_grad_enabled() -> bool:
    return _state.grad_enabled


class _MulScope:
    def __init__(self):
        self.start = 0
        self.count = 0


@contextlib.contextmanager
def mul_scope():
    """Count matmul scalar-multiplies executed inside the block.

    Only matmul contractions are counted (batch * m * n * k per call);
    element-wise products are not. Yields an object whose ``count`` is
    valid after the block exits.
    """
    scope = _MulScope()
    scope.start = _state.matmul_multiplies
    try:
        yield scope
    finally:
        scope.count = _state.matmul_multiplies - scope.start


class Tensor:
    """Dense n-d float array with optional gradient tracking.

    Immutable once created, except for ``grad`` accumulation and in-place
    parameter updates performed by an optimizer between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        if not isinstance(data, np.ndarray) or data.dtype.type not in _DTYPES:
            raise TypeError("Tensor data must be a float32/float64 ndarray")
        self.data = np.ascontiguousarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    # -- introspection ------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -----------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _check_finite(arr: np.ndarray, op: str):
    if _state.finite_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _result(arr: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn):
    _check_finite(arr, op)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(arr, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(arr)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _same_dtype(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# -- construction ------------------------------------------------------


def tensor(data, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def param(data, dtype=np.float32) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


# -- elementwise -------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """a + b. Shapes must match exactly, or b's shape must equal the
    trailing axes of a (bias / positional-table addition). Scalars allowed."""
    if not isinstance(b, Tensor):
        out = a.data + float(b)

        def back_scalar(g, a=a):
            if a.requires_grad:
                _accum(a, g)

        return _result(out, "add", (a,), back_scalar)

    _same_dtype(a, b, "add")
    if a.shape == b.shape:
        out = a.data + b.data

        def back_eq(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)

        return _result(out, "add", (a, b), back_eq)

    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        out = a.data + b.data
        lead = a.ndim - b.ndim

        def back_bc(g, a=a, b=b, lead=lead):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=tuple(range(lead))))

        return _result(out, "add", (a, b), back_bc)

    raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}")


def neg(a: Tensor) -> Tensor:
    def back(g, a=a):
        if a.requires_grad:
            _accum(a, -g)

    return _result(-a.data, "neg", (a,), back)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, neg(b))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; shapes must match exactly. Scalars allowed."""
    if not isinstance(b, Tensor):
        s = float(b)
        out = a.data * s

        def back_scalar(g, a=a, s=s):
            if a.requires_grad:
                _accum(a, g * s)

        return _result(out, "mul", (a,), back_scalar)

    _same_dtype(a, b, "mul")
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def back(g, a=a, b=b):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _result(out, "mul", (a, b), back)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); the smooth nonlinearity used in MLPs and embedders."""
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def back(g, a=a, sig=sig):
        if a.requires_grad:
            _accum(a, g * sig * (1.0 + a.data * (1.0 - sig)))

    return _result(out, "silu", (a,), back)


# -- shape manipulation ------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def back(g, a=a):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _result(out, "reshape", (a,), back)


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    """Exchange two axes."""
    if a.ndim < 2:
        raise ShapeError("swap_axes needs ndim >= 2")
    out = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))

    def back(g, a=a, ax1=ax1, ax2=ax2):
        if a.requires_grad:
            _accum(a, np.swapaxes(g, ax1, ax2))

    return _result(out, "swap_axes", (a,), back)


def swap_last(a: Tensor) -> Tensor:
    """Transpose the final two axes."""
    return swap_axes(a, -1, -2)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def back(g, tensors=tuple(tensors), axis=axis, offs=offs):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offs[i], offs[i + 1])
                _accum(t, g[tuple(sl)])

    return _result(out, "concat", tuple(tensors), back)


def split(a: Tensor, sizes: list[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis of extent {a.shape[axis]}")
    outs = []
    off = 0
    for sz in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(off, off + sz)
        piece = np.ascontiguousarray(a.data[tuple(sl)])

        def back(g, a=a, sl=tuple(sl)):
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[sl] += g

        outs.append(_result(piece, "split", (a,), back))
        off += sz
    return outs


def take_rows(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids]; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("take_rows expects a flat id list")
    if table.ndim != 2:
        raise ShapeError("take_rows expects a 2-d table")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def back(g, table=table, ids=ids):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _result(out, "take_rows", (table,), back)


def index_rows(a: Tensor, idx) -> Tensor:
    """Gather along the token axis: out[..., i, :] = a[..., idx[i], :].
    Gradients scatter-add back (an index may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("index_rows expects a flat index list")
    if a.ndim < 2:
        raise ShapeError("index_rows needs ndim >= 2")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-2]):
        raise IndexError("row index out of range")
    out = np.ascontiguousarray(np.take(a.data, idx, axis=-2))

    def back(g, a=a, idx=idx):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            view = np.moveaxis(a.grad, -2, 0)
            np.add.at(view, idx, np.moveaxis(g, -2, 0))

    return _result(out, "index_rows", (a,), back)


def tile_mid(a: Tensor, n: int) -> Tensor:
    """(..., d) -> (..., n, d) by repetition; gradient sums the new axis.

    Used to apply per-item modulation vectors across a token axis."""
    out = np.repeat(np.expand_dims(a.data, -2), n, axis=-2)

    def back(g, a=a):
        if a.requires_grad:
            _accum(a, g.sum(axis=-2))

    return _result(out, "tile_mid", (a,), back)


# -- reductions --------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def back(g, a=a):
        if a.requires_grad:
            _accum(a, np.broadcast_to(g, a.shape).astype(a.data.dtype))

    return _result(out, "sum_all", (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def back(g, a=a, n=n):
        if a.requires_grad:
            _accum(a, np.broadcast_to(g / n, a.shape).astype(a.data.dtype))

    return _result(out, "mean_all", (a,), back)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes.

    Supported operand ranks: 2-d @ 2-d, n-d @ 2-d (stacked rows against a
    shared weight), and n-d @ n-d with identical leading axes (per-head
    attention contractions). No implicit broadcasting.
    """
    if not isinstance(b, Tensor):
        raise TypeError("matmul requires two Tensors")
    _same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim == 2:
        batch = math.prod(a.shape[:-2]) if a.ndim > 2 else 1
    elif a.shape[:-2] == b.shape[:-2]:
        batch = math.prod(a.shape[:-2]) if a.ndim > 2 else 1
    else:
        raise ShapeError(f"matmul: leading axes differ, {a.shape} @ {b.shape}")

    m, k = a.shape[-2], a.shape[-1]
    n = b.shape[-1]
    _state.matmul_multiplies += batch * m * n * k
    out = a.data @ b.data

    def back(g, a=a, b=b):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                ga = a.data.reshape(-1, a.shape[-1])
                gg = g.reshape(-1, g.shape[-1])
                _accum(b, ga.T @ gg)
            else:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(out, "matmul", (a, b), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically-stabilized softmax along ``axis`` (max-subtraction)."""
    ax = axis if axis >= 0 else a.ndim + axis
    if ax < 0 or ax >= a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    if a.shape[ax] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def back(g, a=a, out=out, ax=ax):
        if a.requires_grad:
            dot = (g * out).sum(axis=ax, keepdims=True)
            _accum(a, out * (g - dot))

    return _result(out, "softmax", (a,), back)


def layer_norm(a: Tensor, eps: float = 1e-6,
               gamma: Tensor | None = None, beta: Tensor | None = None) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply the
    optional learned affine (gamma, beta)."""
    d = a.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if (gamma is None) != (beta is None):
        raise ValueError("layer_norm: gamma and beta must be given together")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    if gamma is not None:
        _same_dtype(a, gamma, "layer_norm")
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeError(f"layer_norm affine must have shape ({d},)")
        out = y * gamma.data + beta.data
        parents = (a, gamma, beta)
    else:
        out = y
        parents = (a,)

    def back(g, a=a, gamma=gamma, beta=beta, y=y, inv=inv, d=d):
        gy = g * gamma.data if gamma is not None else g
        if gamma is not None and gamma.requires_grad:
            _accum(gamma, (g * y).reshape(-1, d).sum(axis=0))
        if beta is not None and beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            _accum(a, inv * (gy - m1 - y * m2))

    return _result(out, "layer_norm", parents, back)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the trailing two axes, per head.

    ``mask`` is boolean (n_q, n_k), True = attend; masked scores receive a
    -1e30 additive penalty before the stabilized softmax. A query row with
    no attendable key is rejected.
    """
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise ShapeError(f"attention shapes inconsistent: q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[:-2] != k.shape[:-2]:
        raise ShapeError("attention: q and k/v head axes differ")
    d = q.shape[-1]
    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(d))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeError(f"mask shape {mask.shape} != ({q.shape[-2]}, {k.shape[-2]})")
        if not mask.any(axis=1).all():
            raise ValueError("attention: a query row is fully masked")
        bias = Tensor(np.where(mask, 0.0, MASK_NEG).astype(q.data.dtype))
        scores = add(scores, bias)
    probs = softmax(scores, axis=-1)
    return matmul(probs, v)


# -- autodiff ----------------------------------------------------------


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss. Grads accumulate additively
    into every requires_grad leaf; call again without reset to accumulate."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward on a tensor with no graph (requires_grad=False)")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    # interior nodes belong to this sweep only; leaves keep accumulating
    for node in topo:
        if node._backward is not None:
            node.grad = None

    if loss._backward is None:
        _accum(loss, np.ones_like(loss.data))
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(fn, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be a deterministic Tensor -> scalar Tensor map and ``x``
    must be float64. Error is |analytic - numeric| / max(1, |a|, |n|).
    """
    if x.data.dtype != np.float64:
        raise TypeError("grad_check requires a float64 input")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = fn(probe)
    if out.data.size != 1:
        raise ValueError("grad_check target must return a scalar")
    backward(out)
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(probe).item()
            flat[i] = orig - h
            fm = fn(probe).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
    numeric = numeric.reshape(probe.shape)
    if not np.all(np.isfinite(numeric)):
        raise FloatingPointError("non-finite central differences")

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
