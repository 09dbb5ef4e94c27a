"""Cross-modal interaction blocks and their placement schedule.

A bridge block taps both towers' latents at paired layers, adapts them to a
shared width, runs one of five fusion mechanisms, and writes the update back
through zero-initialized output adapters. Zero-init makes the fused model
equal the bridge-less towers at the start of training.

Fusion mechanisms:
  DCA        two parallel cross-attention streams, each modality querying
             the other; both streams read the pre-fusion latents.
  FULL_ATTN  joint self-attention over the concatenated token sequences.
  ADDITIVE   nearest-neighbor temporal resampling + linear projection +
             element-wise addition, each direction.
  UNI_V2A    video conditions audio: audio runs the cross-attention stream,
             video runs a parameter-matched self-attention stream.
  UNI_A2V    the mirror image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conditioning import TimestepPair
from .nn import MLP, AdaLN, Linear, Module, TimestepEmbedder, apply_gate, merge_heads, split_heads
from .tensor import Tensor

MECHANISMS = ("DCA", "FULL_ATTN", "ADDITIVE", "UNI_V2A", "UNI_A2V")

# Published placement rows: preset -> (video layer indices, audio layer indices)
PAPER_PRESETS = {
    "early": ([0, 1, 2, 3], [0, 1, 2, 3]),
    "middle": ([13, 14, 15, 16], [10, 11, 12, 13]),
    "late": ([27, 28, 29, 30], [21, 22, 23, 24]),
    "uniform": ([6, 12, 18, 24], [2, 8, 13, 18]),
    "uniform_early_bias": ([3, 7, 11, 15], [2, 5, 8, 11]),
}
PAPER_VIDEO_DEPTH = 31
PAPER_AUDIO_DEPTH = 25


@dataclass(frozen=True)
class BridgeConfig:
    mechanism: str
    video_layers: tuple[int, ...]
    audio_layers: tuple[int, ...]
    d_bridge: int
    n_heads: int

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; pick from {MECHANISMS}")
        object.__setattr__(self, "video_layers", tuple(self.video_layers))
        object.__setattr__(self, "audio_layers", tuple(self.audio_layers))
        if len(self.video_layers) != len(self.audio_layers):
            raise ValueError("video_layers and audio_layers must pair up 1:1")
        for name, layers in (("video_layers", self.video_layers), ("audio_layers", self.audio_layers)):
            if any(b <= a for a, b in zip(layers, layers[1:])):
                raise ValueError(f"{name} must be strictly increasing, got {layers}")
            if any(i < 0 for i in layers):
                raise ValueError(f"{name} must be non-negative, got {layers}")
        if self.d_bridge % self.n_heads != 0:
            raise ValueError("d_bridge must be divisible by n_heads")

    @property
    def n_blocks(self) -> int:
        return len(self.video_layers)


@dataclass(frozen=True)
class PlacementPlan:
    """Validated binding of bridge block i to tower layers."""

    video_layers: tuple[int, ...]
    audio_layers: tuple[int, ...]

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.video_layers, self.audio_layers))

    def __len__(self):
        return len(self.video_layers)


def place_bridges(cfg: BridgeConfig, video_depth: int, audio_depth: int) -> PlacementPlan:
    for name, layers, depth in (("video", cfg.video_layers, video_depth),
                                ("audio", cfg.audio_layers, audio_depth)):
        if any(i >= depth for i in layers):
            raise ValueError(f"{name} bridge layer out of range for depth {depth}: {layers}")
    return PlacementPlan(cfg.video_layers, cfg.audio_layers)


def _scale_indices(paper_idx: list[int], paper_depth: int, depth: int) -> tuple[int, ...]:
    """Proportional rescaling round(i / paper_depth * depth), then the minimal
    adjustment that restores strict increase inside [0, depth-1]."""
    n = len(paper_idx)
    if depth < n:
        raise ValueError(f"depth {depth} cannot host {n} bridge points")
    idx = [round(i / paper_depth * depth) for i in paper_idx]
    for i in range(n - 1, -1, -1):  # keep room at the top
        idx[i] = min(idx[i], depth - 1 - (n - 1 - i))
    idx[0] = max(idx[0], 0)
    for i in range(1, n):
        idx[i] = max(idx[i], idx[i - 1] + 1)
    return tuple(idx)


def preset_placement(name: str, video_depth: int, audio_depth: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """The five named placement presets, rescaled to the given tower depths."""
    if name not in PAPER_PRESETS:
        raise ValueError(f"unknown placement preset {name!r}; pick from {sorted(PAPER_PRESETS)}")
    v, a = PAPER_PRESETS[name]
    return (_scale_indices(v, PAPER_VIDEO_DEPTH, video_depth),
            _scale_indices(a, PAPER_AUDIO_DEPTH, audio_depth))


# -- analytic multiply model --------------------------------------------


def flop_model(mechanism: str, n_v: int, n_a: int, d: int) -> int:
    """Scalar multiplies of the fusion mix stage.

    For the attention mechanisms this is the score (q kᵀ) plus mix
    (weights · v) contractions, 2 * n_q * n_k * d each pair:

        FULL_ATTN: 2 * (n_v + n_a)^2 * d
        DCA:       2 * (n_v * n_a * d) * 2      (two directions)
        UNI_*:     2 * n_v * n_a * d + 2 * n_self^2 * d
                   (n_self = n_v for V2A, n_a for A2V)

    ADDITIVE has no attention; its mix stage is the pair of cross-stream
    projections, one d x d matrix per target row:

        ADDITIVE:  (n_v + n_a) * d^2
    """
    if n_v <= 0 or n_a <= 0 or d <= 0:
        raise ValueError("flop_model sizes must be positive")
    if mechanism == "FULL_ATTN":
        return 2 * (n_v + n_a) ** 2 * d
    if mechanism == "DCA":
        return 2 * (n_v * n_a * d) * 2
    if mechanism == "UNI_V2A":
        return 2 * n_v * n_a * d + 2 * n_v ** 2 * d
    if mechanism == "UNI_A2V":
        return 2 * n_v * n_a * d + 2 * n_a ** 2 * d
    if mechanism == "ADDITIVE":
        return (n_v + n_a) * d * d
    raise ValueError(f"unknown mechanism {mechanism!r}")


# -- building blocks -----------------------------------------------------


class CountedAttention(Module):
    """Multi-head attention that records the score+mix multiplies of its
    most recent call (projections excluded)."""

    def __init__(self, d: int, n_heads: int, rng, d_kv: int | None = None, dtype=np.float32):
        super().__init__()
        self.n_heads = n_heads
        d_kv = d_kv if d_kv is not None else d
        self.wq = Linear(d, d, rng, dtype=dtype)
        self.wk = Linear(d_kv, d, rng, dtype=dtype)
        self.wv = Linear(d_kv, d, rng, dtype=dtype)
        self.wo = Linear(d, d, rng, dtype=dtype)
        self.last_mix_multiplies = 0

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q = split_heads(self.wq(q_in), self.n_heads)
        k = split_heads(self.wk(kv_in), self.n_heads)
        v = split_heads(self.wv(kv_in), self.n_heads)
        with T.mul_scope() as sc:
            out = T.scaled_dot_attention(q, k, v, mask=mask)
        self.last_mix_multiplies = sc.count
        return self.wo(merge_heads(out))


class _CrossStream(Module):
    """One DCA stream: gated cross-attention then gated MLP, query side
    modulated by the timestep condition, key/value side plain-normalized."""

    def __init__(self, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.ada_attn = AdaLN(d, d, dtype=dtype)
        self.attn = CountedAttention(d, n_heads, rng, dtype=dtype)
        self.ada_mlp = AdaLN(d, d, dtype=dtype)
        self.mlp = MLP(d, rng, dtype=dtype)

    def __call__(self, x: Tensor, context: Tensor, cond: Tensor) -> Tensor:
        m, g = self.ada_attn(x, cond)
        x = apply_gate(x, self.attn(m, T.layer_norm(context)), g)
        m, g = self.ada_mlp(x, cond)
        return apply_gate(x, self.mlp(m), g)


class _SelfStream(Module):
    """Self-attention stream with the same parameter budget as _CrossStream
    (used by the conditioning side of the unidirectional variants)."""

    def __init__(self, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.ada_attn = AdaLN(d, d, dtype=dtype)
        self.attn = CountedAttention(d, n_heads, rng, dtype=dtype)
        self.ada_mlp = AdaLN(d, d, dtype=dtype)
        self.mlp = MLP(d, rng, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        m, g = self.ada_attn(x, cond)
        x = apply_gate(x, self.attn(m, m), g)
        m, g = self.ada_mlp(x, cond)
        return apply_gate(x, self.mlp(m), g)


class _DCACore(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.a2v = _CrossStream(d, n_heads, rng, dtype=dtype)  # video queries audio
        self.v2a = _CrossStream(d, n_heads, rng, dtype=dtype)  # audio queries video
        self.last_mix_multiplies = 0

    def __call__(self, z_v: Tensor, z_a: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        # both streams read the original, pre-fusion latents
        u_v = self.a2v(z_v, z_a, cond)
        u_a = self.v2a(z_a, z_v, cond)
        self.last_mix_multiplies = self.a2v.attn.last_mix_multiplies + self.v2a.attn.last_mix_multiplies
        return u_v, u_a


class _FullAttnCore(Module):
    """Joint self-attention across the concatenated sequences, separate
    per-modality q/k/v projections, shared output projection."""

    def __init__(self, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.n_heads = n_heads
        self.ada_v = AdaLN(d, d, dtype=dtype)
        self.ada_a = AdaLN(d, d, dtype=dtype)
        self.proj_v = [Linear(d, d, rng, dtype=dtype) for _ in range(3)]
        self.proj_a = [Linear(d, d, rng, dtype=dtype) for _ in range(3)]
        self.wo = Linear(d, d, rng, dtype=dtype)
        self.ada_mlp_v = AdaLN(d, d, dtype=dtype)
        self.mlp_v = MLP(d, rng, dtype=dtype)
        self.ada_mlp_a = AdaLN(d, d, dtype=dtype)
        self.mlp_a = MLP(d, rng, dtype=dtype)
        self.last_mix_multiplies = 0

    def __call__(self, z_v: Tensor, z_a: Tensor, cond: Tensor,
                 cross_modal: bool = True) -> tuple[Tensor, Tensor]:
        n_v, n_a = z_v.shape[-2], z_a.shape[-2]
        mv, gv = self.ada_v(z_v, cond)
        ma, ga = self.ada_a(z_a, cond)
        q = T.concat([self.proj_v[0](mv), self.proj_a[0](ma)], axis=-2)
        k = T.concat([self.proj_v[1](mv), self.proj_a[1](ma)], axis=-2)
        v = T.concat([self.proj_v[2](mv), self.proj_a[2](ma)], axis=-2)
        mask = None
        if not cross_modal:  # block-diagonal: each modality sees only itself
            mask = np.zeros((n_v + n_a, n_v + n_a), dtype=bool)
            mask[:n_v, :n_v] = True
            mask[n_v:, n_v:] = True
        with T.mul_scope() as sc:
            attn = T.scaled_dot_attention(split_heads(q, self.n_heads),
                                          split_heads(k, self.n_heads),
                                          split_heads(v, self.n_heads), mask=mask)
        self.last_mix_multiplies = sc.count
        out = self.wo(merge_heads(attn))
        o_v, o_a = T.split(out, [n_v, n_a], axis=-2)
        h_v = apply_gate(z_v, o_v, gv)
        h_a = apply_gate(z_a, o_a, ga)
        m, g = self.ada_mlp_v(h_v, cond)
        u_v = apply_gate(h_v, self.mlp_v(m), g)
        m, g = self.ada_mlp_a(h_a, cond)
        u_a = apply_gate(h_a, self.mlp_a(m), g)
        return u_v, u_a


def nearest_indices(n_src: int, n_dst: int) -> np.ndarray:
    """Source row feeding each destination row, matching cell centers on the
    normalized [0, 1) axis: idx[i] = floor((i + 0.5) * n_src / n_dst)."""
    i = np.arange(n_dst)
    return np.minimum(((i + 0.5) * n_src / n_dst).astype(np.int64), n_src - 1)


class _AdditiveCore(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.proj_a2v = Linear(d, d, rng, dtype=dtype)
        self.proj_v2a = Linear(d, d, rng, dtype=dtype)
        self.ada_mlp_v = AdaLN(d, d, dtype=dtype)
        self.mlp_v = MLP(d, rng, dtype=dtype)
        self.ada_mlp_a = AdaLN(d, d, dtype=dtype)
        self.mlp_a = MLP(d, rng, dtype=dtype)
        self.last_mix_multiplies = 0

    def __call__(self, z_v: Tensor, z_a: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        n_v, n_a = z_v.shape[-2], z_a.shape[-2]
        a_rs = T.index_rows(z_a, nearest_indices(n_a, n_v))
        v_rs = T.index_rows(z_v, nearest_indices(n_v, n_a))
        with T.mul_scope() as sc:
            add_v = self.proj_a2v(a_rs)
            add_a = self.proj_v2a(v_rs)
        self.last_mix_multiplies = sc.count
        h_v = T.add(z_v, add_v)
        h_a = T.add(z_a, add_a)
        m, g = self.ada_mlp_v(h_v, cond)
        u_v = apply_gate(h_v, self.mlp_v(m), g)
        m, g = self.ada_mlp_a(h_a, cond)
        u_a = apply_gate(h_a, self.mlp_a(m), g)
        return u_v, u_a


class _UniCore(Module):
    def __init__(self, direction: str, d: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        if direction not in ("V2A", "A2V"):
            raise ValueError("direction must be V2A or A2V")
        self.direction = direction
        self.cross = _CrossStream(d, n_heads, rng, dtype=dtype)  # conditioned side
        self.self_stream = _SelfStream(d, n_heads, rng, dtype=dtype)  # conditioning side
        self.last_mix_multiplies = 0

    def __call__(self, z_v: Tensor, z_a: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        if self.direction == "V2A":
            u_v = self.self_stream(z_v, cond)
            u_a = self.cross(z_a, z_v, cond)
        else:
            u_a = self.self_stream(z_a, cond)
            u_v = self.cross(z_v, z_a, cond)
        self.last_mix_multiplies = (self.cross.attn.last_mix_multiplies
                                    + self.self_stream.attn.last_mix_multiplies)
        return u_v, u_a


class BridgeBlock(Module):
    """Width adapters around one fusion core, conditioned on both timesteps.

    Output adapters are zero-initialized, so apply() is the identity at
    init regardless of the core's weights.
    """

    def __init__(self, cfg: BridgeConfig, d_video: int, d_audio: int, rng, dtype=np.float32):
        super().__init__()
        d = cfg.d_bridge
        self.mechanism = cfg.mechanism
        self.in_v = Linear(d_video, d, rng, dtype=dtype)
        self.in_a = Linear(d_audio, d, rng, dtype=dtype)
        self.out_v = Linear(d, d_video, zero_init=True, dtype=dtype)
        self.out_a = Linear(d, d_audio, zero_init=True, dtype=dtype)
        self.t_embedder = TimestepEmbedder(d, rng, dtype=dtype)
        if cfg.mechanism == "DCA":
            self.core = _DCACore(d, cfg.n_heads, rng, dtype=dtype)
        elif cfg.mechanism == "FULL_ATTN":
            self.core = _FullAttnCore(d, cfg.n_heads, rng, dtype=dtype)
        elif cfg.mechanism == "ADDITIVE":
            self.core = _AdditiveCore(d, cfg.n_heads, rng, dtype=dtype)
        else:
            self.core = _UniCore(cfg.mechanism[4:], d, cfg.n_heads, rng, dtype=dtype)

    def cond(self, t_pair) -> Tensor:
        t_a, t_v = _times(t_pair)
        return T.add(self.t_embedder(t_v), self.t_embedder(t_a))

    def fuse_latents(self, z_v: Tensor, z_a: Tensor, t_pair, **kw) -> tuple[Tensor, Tensor]:
        """Run the fusion core on latents already at bridge width."""
        if z_v.shape[-2] == 0 or z_a.shape[-2] == 0:
            raise T.ShapeError("fusion requires non-empty sequences on both sides")
        return self.core(z_v, z_a, self.cond(t_pair), **kw)

    def apply(self, l_v: Tensor, l_a: Tensor, t_pair) -> tuple[Tensor, Tensor]:
        """Tower-width entry point: adapt in, fuse, write the update back."""
        z_v = self.in_v(l_v)
        z_a = self.in_a(l_a)
        u_v, u_a = self.fuse_latents(z_v, z_a, t_pair)
        out_v = T.add(l_v, self.out_v(T.sub(u_v, z_v)))
        out_a = T.add(l_a, self.out_a(T.sub(u_a, z_a)))
        return out_v, out_a

    @property
    def last_mix_multiplies(self) -> int:
        return self.core.last_mix_multiplies


def _times(t_pair):
    """Accept a TimestepPair or an array of audio times; return (t_a, t_v)."""
    if isinstance(t_pair, TimestepPair):
        return t_pair.t_a, t_pair.t_v
    t_a = np.asarray(t_pair, dtype=np.float64)
    return t_a, 1000.0 * t_a


def build_bridge_blocks(cfg: BridgeConfig, d_video: int, d_audio: int, seed: int,
                        dtype=np.float32) -> list[BridgeBlock]:
    from . import rng as R

    return [BridgeBlock(cfg, d_video, d_audio, R.stream(seed, "bridge.init", i), dtype=dtype)
            for i in range(cfg.n_blocks)]
