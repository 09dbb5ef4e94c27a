"""Parameter containers and the small set of layers shared by both towers
and the bridge blocks."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter tree. Tensors assigned to attributes register as
    parameters when they require grad; Modules and lists of Modules register
    as children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            self._children[name] = _ModuleList(value)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for cn, c in self._children.items():
            yield from c.named_parameters(prefix + cn + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag


class _ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        object.__setattr__(self, "mods", list(mods))
        for i, m in enumerate(self.mods):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.mods)

    def __len__(self):
        return len(self.mods)

    def __getitem__(self, i):
        return self.mods[i]


def init_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> Tensor:
    return T.param(rng.standard_normal(shape) * std, dtype=dtype)


class Linear(Module):
    """y = x W + b with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False, dtype=np.float32):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        if zero_init:
            self.weight = T.param(np.zeros((d_in, d_out)), dtype=dtype)
        else:
            if rng is None:
                raise ValueError("Linear needs an rng unless zero_init")
            self.weight = init_normal(rng, (d_in, d_out), dtype=dtype)
        self.bias = T.param(np.zeros(d_out), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            y = T.add(T.matmul(T.reshape(x, (1, self.d_in)), self.weight), self.bias)
            return T.reshape(y, (self.d_out,))
        return T.add(T.matmul(x, self.weight), self.bias)


class MLP(Module):
    """Position-wise feed-forward: Linear -> silu -> Linear, 4x expansion."""

    def __init__(self, d: int, rng: np.random.Generator, expansion: int = 4, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d, expansion * d, rng, dtype=dtype)
        self.fc2 = Linear(expansion * d, d, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.silu(self.fc1(x)))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., n, h*dh) -> (..., h, n, dh)"""
    *lead, n, d = x.shape
    dh = d // n_heads
    x = T.reshape(x, (*lead, n, n_heads, dh))
    return T.swap_axes(x, -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """(..., h, n, dh) -> (..., n, h*dh)"""
    *lead, h, n, dh = x.shape
    x = T.swap_axes(x, -3, -2)
    return T.reshape(x, (*lead, n, h * dh))


class Attention(Module):
    """Multi-head attention with separate query and key/value input widths.

    Covers self-attention (q_in is kv_in), text cross-attention and the
    bridge cross-attention streams.
    """

    def __init__(self, d_q: int, d_kv: int, d_model: int, n_heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.wq = Linear(d_q, d_model, rng, dtype=dtype)
        self.wk = Linear(d_kv, d_model, rng, dtype=dtype)
        self.wv = Linear(d_kv, d_model, rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng, dtype=dtype)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q = split_heads(self.wq(q_in), self.n_heads)
        k = split_heads(self.wk(kv_in), self.n_heads)
        v = split_heads(self.wv(kv_in), self.n_heads)
        out = T.scaled_dot_attention(q, k, v, mask=mask)
        return self.wo(merge_heads(out))


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Sin/cos features at geometrically spaced frequencies.

    Scalar t gives shape (dim,); a length-B vector gives (B, dim). The first
    half is sines, the second half cosines, so t=0 maps to zeros ++ ones.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t_arr[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


class TimestepEmbedder(Module):
    """Sinusoidal features followed by a two-layer MLP, giving the
    conditioning vector consumed by the modulation layers."""

    def __init__(self, width: int, rng: np.random.Generator,
                 sin_dim: int | None = None, max_period: float = 10000.0, dtype=np.float32):
        super().__init__()
        self.sin_dim = sin_dim if sin_dim is not None else width
        self.max_period = max_period
        self.dtype = dtype
        self.fc1 = Linear(self.sin_dim, width, rng, dtype=dtype)
        self.fc2 = Linear(width, width, rng, dtype=dtype)

    def __call__(self, t) -> Tensor:
        emb = Tensor(sinusoidal_embedding(t, self.sin_dim, self.max_period, dtype=self.dtype))
        return self.fc2(T.silu(self.fc1(emb)))


class AdaLN(Module):
    """Adaptive layer norm for one sub-layer: LN(x) scaled and shifted by
    learned maps of the conditioning vector, plus a residual gate.

    The projection is zero-initialized, so at init this is exactly LN with
    a zero gate and a gated residual sub-layer is the identity.
    """

    def __init__(self, cond_dim: int, d: int, dtype=np.float32):
        super().__init__()
        self.d = d
        self.proj = Linear(cond_dim, 3 * d, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        """x: (..., n, d); cond: (..., c). Returns (modulated x, gate)."""
        n = x.shape[-2]
        mods = self.proj(T.silu(cond))
        scale, shift, gate = T.split(mods, [self.d, self.d, self.d], axis=-1)
        scaled = T.mul(T.layer_norm(x), T.tile_mid(T.add(scale, 1.0), n))
        return T.add(scaled, T.tile_mid(shift, n)), gate


def apply_gate(x: Tensor, update: Tensor, gate: Tensor) -> Tensor:
    """x + gate * update, broadcasting the per-item gate over tokens."""
    return T.add(x, T.mul(update, T.tile_mid(gate, x.shape[-2])))
