"""Timestep coupling, toy text conditioning, and modulation helpers.

The audio tower runs on a unit-interval time t_a; the video tower consumes
t_v = 1000 * t_a. The pair is always constructed from t_a so the coupling
is exact at float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import AdaLN, TimestepEmbedder, sinusoidal_embedding  # noqa: F401  (re-exported)
from .tensor import Tensor

NULL_TOKEN = 0

VIDEO_TIME_SCALE = 1000.0


@dataclass(frozen=True)
class TimestepPair:
    """Coupled diffusion/flow times. t_v is derived, never stored freely."""

    t_a: float

    def __post_init__(self):
        if not 0.0 <= self.t_a <= 1.0:
            raise ValueError(f"t_a must lie in [0, 1], got {self.t_a}")

    @property
    def t_v(self) -> float:
        return VIDEO_TIME_SCALE * self.t_a


@dataclass
class TextContext:
    """Token ids plus their embedding rows. The null condition is the single
    reserved token id 0."""

    token_ids: list[int]
    embeddings: Tensor

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise ValueError("TextContext needs at least one token (use [NULL_TOKEN])")
        if self.embeddings.shape[0] != len(self.token_ids):
            raise ValueError("embeddings row count must match token count")


def null_context(table: Tensor) -> TextContext:
    return encode_text([NULL_TOKEN], table)


def encode_text(token_ids: list[int], table: Tensor) -> TextContext:
    """Embedding-table lookup; pure in (ids, table)."""
    if len(token_ids) < 1:
        raise ValueError("token_ids must be non-empty")
    rows = T.take_rows(table, token_ids)
    return TextContext(token_ids=list(token_ids), embeddings=rows)


def timestep_embedding(t: float, dim: int, max_period: float = 10000.0,
                       dtype=np.float32) -> Tensor:
    """Sinusoidal features for a scalar time (sin half then cos half)."""
    if not np.isfinite(t):
        raise ValueError("timestep must be finite")
    return Tensor(sinusoidal_embedding(float(t), dim, max_period, dtype=dtype))


def adaln_modulate(x: Tensor, cond: Tensor, unit: AdaLN) -> tuple[Tensor, Tensor]:
    """Apply one AdaLN unit: returns (LN(x) * (1 + scale) + shift, gate)."""
    return unit(x, cond)
