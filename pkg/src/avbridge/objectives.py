"""Noise schedules, forward corruption, prediction targets and the joint
training loss.

Audio uses the trigonometric schedule alpha(t) = cos(t*pi/2),
sigma(t) = sin(t*pi/2) with a v-prediction target; video uses straight-path
linear interpolation on its 1000-scaled clock with a velocity-field target.
One audio time is drawn per pair, so both modalities corrupt coherently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conditioning import TimestepPair
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ScheduleCoeffs:
    alpha: float
    sigma: float


def schedule(t_a: float) -> ScheduleCoeffs:
    """(cos(t*pi/2), sin(t*pi/2)) for t in [0, 1]."""
    if not 0.0 <= t_a <= 1.0:
        raise ValueError(f"t_a must lie in [0, 1], got {t_a}")
    return ScheduleCoeffs(math.cos(t_a * math.pi / 2), math.sin(t_a * math.pi / 2))


def alpha_sigma(t_a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized schedule for per-item times."""
    t = np.asarray(t_a, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t_a values must lie in [0, 1]")
    return np.cos(t * math.pi / 2), np.sin(t * math.pi / 2)


def map_timestep(t_a: float) -> TimestepPair:
    """Couple the audio time to the video clock (exact 1000x)."""
    return TimestepPair(t_a)


def _expand(c, x: np.ndarray) -> np.ndarray:
    """Reshape a scalar or per-item coefficient for broadcasting against x."""
    c = np.asarray(c, dtype=x.dtype)
    if c.ndim == 0:
        return c
    if c.shape[0] != x.shape[0]:
        raise ShapeError(f"coefficient batch {c.shape[0]} != data batch {x.shape[0]}")
    return c.reshape(c.shape + (1,) * (x.ndim - 1))


def _check_same_shape(x, eps):
    if np.shape(x) != np.shape(eps):
        raise ShapeError(f"shape mismatch {np.shape(x)} vs {np.shape(eps)}")


def noisify_audio(x_a: np.ndarray, eps_a: np.ndarray, t_a) -> np.ndarray:
    """alpha * x + sigma * eps."""
    _check_same_shape(x_a, eps_a)
    a, s = alpha_sigma(t_a)
    return _expand(a, x_a) * x_a + _expand(s, x_a) * eps_a


def v_target(x_a: np.ndarray, eps_a: np.ndarray, t_a) -> np.ndarray:
    """alpha * eps - sigma * x."""
    _check_same_shape(x_a, eps_a)
    a, s = alpha_sigma(t_a)
    return _expand(a, x_a) * eps_a - _expand(s, x_a) * x_a


def noisify_video(x_v: np.ndarray, eps_v: np.ndarray, t_v) -> np.ndarray:
    """(1 - t_v/1000) * x + (t_v/1000) * eps for t_v in [0, 1000]."""
    _check_same_shape(x_v, eps_v)
    r = np.asarray(t_v, dtype=np.float64) / 1000.0
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("t_v values must lie in [0, 1000]")
    return _expand(1.0 - r, x_v) * x_v + _expand(r, x_v) * eps_v


def fm_target(x_v: np.ndarray, eps_v: np.ndarray) -> np.ndarray:
    """eps - x, the straight-path velocity field (time-independent)."""
    _check_same_shape(x_v, eps_v)
    return eps_v - x_v


@dataclass
class TrainingBatch:
    """Paired latents sharing event trains, plus per-item token rows
    (already padded to a common length; null token id 0)."""

    x_v: np.ndarray  # (B, seq_v, d_v)
    x_a: np.ndarray  # (B, seq_a, d_a)
    tokens_v: np.ndarray  # (B, n_text) int
    tokens_a: np.ndarray  # (B, n_text) int

    def __post_init__(self):
        if self.x_v.shape[0] != self.x_a.shape[0]:
            raise ShapeError("video/audio batch sizes differ")


def joint_loss(model, batch: TrainingBatch, t_a: np.ndarray,
               eps_v: np.ndarray, eps_a: np.ndarray,
               loss_weights: tuple[float, float] = (1.0, 1.0)) -> tuple[Tensor, Tensor, Tensor]:
    """(L_total, L_audio, L_video): mean-squared errors against the two
    targets, summed (optionally re-weighted; the published objective is the
    plain sum)."""
    t_a = np.asarray(t_a, dtype=np.float64)
    if t_a.shape != (batch.x_v.shape[0],):
        raise ShapeError("need one t_a per batch item")
    xt_v = noisify_video(batch.x_v, eps_v, 1000.0 * t_a).astype(batch.x_v.dtype)
    xt_a = noisify_audio(batch.x_a, eps_a, t_a).astype(batch.x_a.dtype)
    tgt_v = fm_target(batch.x_v, eps_v).astype(batch.x_v.dtype)
    tgt_a = v_target(batch.x_a, eps_a, t_a).astype(batch.x_a.dtype)

    pred_v, pred_a = model.forward(Tensor(xt_v), Tensor(xt_a),
                                   batch.tokens_v, batch.tokens_a, t_a)
    dv = T.sub(pred_v, Tensor(tgt_v))
    da = T.sub(pred_a, Tensor(tgt_a))
    loss_v = T.mean_all(T.mul(dv, dv))
    loss_a = T.mean_all(T.mul(da, da))
    w_a, w_v = loss_weights
    total = T.add(T.mul(loss_a, w_a), T.mul(loss_v, w_v))
    return total, loss_a, loss_v
