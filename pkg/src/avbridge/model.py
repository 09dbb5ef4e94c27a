"""The fused dual-tower model: towers advanced in lockstep, bridge blocks
exchanging latents at the placement plan's layer pairs."""

from __future__ import annotations

import numpy as np

from . import rng as R
from . import tensor as T
from .bridge import BridgeBlock, BridgeConfig, PlacementPlan, _times, build_bridge_blocks, place_bridges
from .conditioning import TextContext
from .nn import Module
from .tensor import Tensor
from .towers import Tower, TowerConfig, build_tower


class FusedModel(Module):
    """Two towers plus an optional chain of bridge blocks.

    With ``bridge_cfg=None`` the towers run independently (the no-bridge
    baseline with zero interaction parameters).
    """

    def __init__(self, video_cfg: TowerConfig, audio_cfg: TowerConfig,
                 bridge_cfg: BridgeConfig | None, seed: int, dtype=np.float32):
        super().__init__()
        self.video_cfg = video_cfg
        self.audio_cfg = audio_cfg
        self.bridge_cfg = bridge_cfg
        self.seed = seed
        self.video = build_tower(video_cfg, seed, dtype=dtype, stream_name="video.init")
        self.audio = build_tower(audio_cfg, seed, dtype=dtype, stream_name="audio.init")
        if bridge_cfg is not None:
            self.plan: PlacementPlan | None = place_bridges(
                bridge_cfg, video_cfg.n_layers, audio_cfg.n_layers)
            self.bridges = build_bridge_blocks(
                bridge_cfg, video_cfg.d_model, audio_cfg.d_model, seed, dtype=dtype)
            self.video.bridge_layers = self.plan.video_layers
            self.audio.bridge_layers = self.plan.audio_layers
        else:
            self.plan = None
            self.bridges = []

    def forward(self, x_v: Tensor, x_a: Tensor, text_v: TextContext | Tensor,
                text_a: TextContext | Tensor, t_pair) -> tuple[Tensor, Tensor]:
        """Predict (video velocity field, audio v-target) for noisy latents.

        ``t_pair`` is a TimestepPair or an array of per-item audio times.
        """
        t_a, t_v = _times(t_pair)
        emb_v = self.video.resolve_text(text_v)
        emb_a = self.audio.resolve_text(text_a)

        h_v = self.video.embed_input(x_v)
        h_a = self.audio.embed_input(x_a)
        cond_v = self.video.cond_vector(t_v)
        cond_a = self.audio.cond_vector(t_a)

        done_v = done_a = 0
        if self.plan is not None:
            for block, (lv, la) in zip(self.bridges, self.plan.pairs):
                h_v = self.video.run_blocks(h_v, emb_v, cond_v, done_v, lv + 1)
                h_a = self.audio.run_blocks(h_a, emb_a, cond_a, done_a, la + 1)
                done_v, done_a = lv + 1, la + 1
                h_v, h_a = block.apply(h_v, h_a, t_pair)
        h_v = self.video.run_blocks(h_v, emb_v, cond_v, done_v, self.video_cfg.n_layers)
        h_a = self.audio.run_blocks(h_a, emb_a, cond_a, done_a, self.audio_cfg.n_layers)
        return self.video.head(h_v, cond_v), self.audio.head(h_a, cond_a)

    __call__ = forward

    def bridge_param_count(self) -> int:
        return sum(b.param_count() for b in self.bridges)
