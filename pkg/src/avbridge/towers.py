"""Latent-sequence transformer towers.

Each tower denoises one modality's latent sequence: blocks of self-attention,
text cross-attention and an MLP, all modulated by the timestep condition.
Bridge blocks tap the running latent after designated layers; an injected
latent replaces the running one (the bridge returns the full fused update,
residual included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as R
from . import tensor as T
from .conditioning import TextContext
from .nn import MLP, AdaLN, Attention, Linear, Module, TimestepEmbedder, apply_gate
from .tensor import Tensor


@dataclass(frozen=True)
class TowerConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_text: int
    seq_len: int
    trainable_suffix: int | None = None  # None = train everything
    vocab: int = 64  # toy vocabulary; id 0 reserved for the null condition

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.seq_len < 1 or self.d_text < 1:
            raise ValueError("seq_len and d_text must be positive")
        if self.vocab < 1:
            raise ValueError("vocab must be positive")
        if self.trainable_suffix is not None and not 0 <= self.trainable_suffix <= self.n_layers:
            raise ValueError("trainable_suffix out of range")


@dataclass
class TowerTrace:
    prediction: Tensor
    taps: dict[int, Tensor] = field(default_factory=dict)


class DiTBlock(Module):
    def __init__(self, d: int, n_heads: int, d_text: int, rng, dtype=np.float32):
        super().__init__()
        self.ada_self = AdaLN(d, d, dtype=dtype)
        self.self_attn = Attention(d, d, d, n_heads, rng, dtype=dtype)
        self.ada_cross = AdaLN(d, d, dtype=dtype)
        self.cross_attn = Attention(d, d_text, d, n_heads, rng, dtype=dtype)
        self.ada_mlp = AdaLN(d, d, dtype=dtype)
        self.mlp = MLP(d, rng, dtype=dtype)

    def __call__(self, x: Tensor, text_emb: Tensor, cond: Tensor) -> Tensor:
        m, g = self.ada_self(x, cond)
        x = apply_gate(x, self.self_attn(m, m), g)
        m, g = self.ada_cross(x, cond)
        x = apply_gate(x, self.cross_attn(m, text_emb), g)
        m, g = self.ada_mlp(x, cond)
        x = apply_gate(x, self.mlp(m), g)
        return x


class FinalLayer(Module):
    """Condition-modulated LN followed by a zero-initialized linear head, so
    an untrained tower predicts exactly zero."""

    def __init__(self, d: int, dtype=np.float32):
        super().__init__()
        self.d = d
        self.proj = Linear(d, 2 * d, zero_init=True, dtype=dtype)
        self.head = Linear(d, d, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        mods = self.proj(T.silu(cond))
        scale, shift = T.split(mods, [self.d, self.d], axis=-1)
        n = x.shape[-2]
        h = T.add(T.mul(T.layer_norm(x), T.tile_mid(T.add(scale, 1.0), n)),
                  T.tile_mid(shift, n))
        return self.head(h)


class Tower(Module):
    def __init__(self, cfg: TowerConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.input_proj = Linear(d, d, rng, dtype=dtype)
        self.pos_emb = T.param(rng.standard_normal((cfg.seq_len, d)) * 0.02, dtype=dtype)
        self.text_table = T.param(rng.standard_normal((cfg.vocab, cfg.d_text)) * 0.02, dtype=dtype)
        self.t_embedder = TimestepEmbedder(d, rng, dtype=dtype)
        self.blocks = [DiTBlock(d, cfg.n_heads, cfg.d_text, rng, dtype=dtype)
                       for _ in range(cfg.n_layers)]
        self.final = FinalLayer(d, dtype=dtype)
        self.bridge_layers: tuple[int, ...] = ()

    # piecewise entry points used by the fused model ---------------------

    def embed_input(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.cfg.seq_len or x.shape[-1] != self.cfg.d_model:
            raise T.ShapeError(
                f"latent shape {x.shape} does not match (seq_len={self.cfg.seq_len}, "
                f"d_model={self.cfg.d_model})")
        return T.add(self.input_proj(x), self.pos_emb)

    def cond_vector(self, t) -> Tensor:
        return self.t_embedder(t)

    def encode_tokens(self, ids) -> Tensor:
        """Embed a flat id list (n,) or an id batch (B, n)."""
        ids = np.asarray(ids, dtype=np.int64)
        rows = T.take_rows(self.text_table, ids.reshape(-1))
        if ids.ndim == 2:
            return T.reshape(rows, (ids.shape[0], ids.shape[1], self.cfg.d_text))
        return rows

    def resolve_text(self, text) -> Tensor:
        """Accept a TextContext, a precomputed embedding Tensor, or token ids."""
        if isinstance(text, TextContext):
            return text.embeddings
        if isinstance(text, Tensor):
            return text
        return self.encode_tokens(text)

    def run_blocks(self, h: Tensor, text_emb: Tensor, cond: Tensor,
                   start: int, end: int) -> Tensor:
        for i in range(start, end):
            h = self.blocks[i](h, text_emb, cond)
        return h

    def head(self, h: Tensor, cond: Tensor) -> Tensor:
        return self.final(h, cond)


def build_tower(cfg: TowerConfig, seed: int, dtype=np.float32, stream_name: str = "tower.init") -> Tower:
    """Deterministic construction: the same (cfg, seed) yields bit-identical
    parameters."""
    tower = Tower(cfg, R.stream(seed, stream_name), dtype=dtype)
    if cfg.trainable_suffix is not None:
        freeze_select(tower, cfg.trainable_suffix)
    return tower


def tower_forward(tower: Tower, x_noisy: Tensor, text: TextContext | Tensor, t,
                  bridge_inject: dict[int, Tensor] | None = None) -> TowerTrace:
    """Run the tower, capturing taps at its configured bridge layers.

    Injected latents replace the running latent after their layer; the tap
    recorded for that layer is always the pre-injection value.
    """
    inject = bridge_inject or {}
    allowed = set(tower.bridge_layers)
    bad = set(inject) - allowed
    if bad:
        raise ValueError(f"injection at non-bridge layers {sorted(bad)}")
    text_emb = tower.resolve_text(text)

    h = tower.embed_input(x_noisy)
    cond = tower.cond_vector(t)
    taps: dict[int, Tensor] = {}
    for i, block in enumerate(tower.blocks):
        h = block(h, text_emb, cond)
        if i in allowed:
            taps[i] = h
            if i in inject:
                if inject[i].shape != h.shape:
                    raise T.ShapeError(
                        f"injected latent shape {inject[i].shape} != {h.shape} at layer {i}")
                h = inject[i]
    return TowerTrace(prediction=tower.head(h, cond), taps=taps)


def freeze_select(tower: Tower, trainable_suffix: int):
    """Leave only the last ``trainable_suffix`` blocks and the output head
    trainable; embeddings and earlier blocks are frozen."""
    n = tower.cfg.n_layers
    if not 0 <= trainable_suffix <= n:
        raise ValueError(f"trainable_suffix {trainable_suffix} out of [0, {n}]")
    tower.set_trainable(False)
    for block in tower.blocks[n - trainable_suffix:]:
        block.set_trainable(True)
    tower.final.set_trainable(True)
