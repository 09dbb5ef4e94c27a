"""Experiment configuration: a strict JSON-backed schema.

Unknown keys are rejected; parse -> serialize -> parse is a fixed point.
Field defaults follow the published training table where a value carries
over to desk scale; budget fields (steps, warmup, batch) and the learning
rate are rescaled so the full ablation matrix fits a small CPU budget, with
the published values noted inline.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .synthdata import DataConfig


def _reject_unknown(d: dict, cls) -> None:
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")


@dataclass(frozen=True)
class TowerSection:
    n_layers: int = 8
    d_model: int = 64
    n_heads: int = 4
    d_text: int = 32
    seq_len: int = 24
    trainable_suffix: int | None = None  # published runs train the last 5 blocks
    vocab: int = 64


AUDIO_TOWER_DEFAULTS = dict(n_layers=6, d_model=48, n_heads=4, seq_len=48)


@dataclass(frozen=True)
class BridgeSection:
    enabled: bool = True           # False = no-bridge baseline (zero interaction params)
    mechanism: str = "DCA"
    placement: str = "uniform_early_bias"  # early|middle|late|uniform|uniform_early_bias
    video_layers: tuple[int, ...] | None = None  # explicit override of the preset
    audio_layers: tuple[int, ...] | None = None
    d_bridge: int = 32             # published width 1536
    n_heads: int = 4               # published 12

    def __post_init__(self):
        if (self.video_layers is None) != (self.audio_layers is None):
            raise ValueError("explicit bridge layers must be given for both towers")
        if self.video_layers is not None:
            object.__setattr__(self, "video_layers", tuple(self.video_layers))
            object.__setattr__(self, "audio_layers", tuple(self.audio_layers))


@dataclass(frozen=True)
class OptimSection:
    lr: float = 2e-3               # published 5e-5 at full scale
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    warmup_steps: int = 100        # published 1000, scaled with total_steps
    total_steps: int = 2000        # published 15000
    min_lr: float = 1e-6
    uncond_prob: float = 0.1       # per-modality independent null-condition drop
    batch_size: int = 16
    loss_weight_audio: float = 1.0  # the published objective is the unweighted sum
    loss_weight_video: float = 1.0
    checkpoint_every: int = 1000


@dataclass(frozen=True)
class SampleSection:
    steps: int = 50
    w_v: float = 6.0               # published video guidance scale
    w_a: float = 6.0               # audio scale unstated; mirrors the video scale
    cfg_branches: int = 2


@dataclass(frozen=True)
class EvalSection:
    eval_every: int = 500
    eval_pairs: int = 8
    eval_sample_steps: int = 16
    detect_threshold: float | None = None  # None = 3 x data noise floor
    align_window: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    video: TowerSection = field(default_factory=TowerSection)
    audio: TowerSection = field(default_factory=lambda: TowerSection(**AUDIO_TOWER_DEFAULTS))
    bridge: BridgeSection = field(default_factory=BridgeSection)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimSection = field(default_factory=OptimSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    caption_mode: str = "disentangled"  # or "shared"

    def __post_init__(self):
        if self.caption_mode not in ("disentangled", "shared"):
            raise ValueError(f"unknown caption_mode {self.caption_mode!r}")
        if self.data.seq_v != self.video.seq_len or self.data.seq_a != self.audio.seq_len:
            raise ValueError("data sequence lengths must match tower seq_len")
        if self.data.d_v != self.video.d_model or self.data.d_a != self.audio.d_model:
            raise ValueError("data latent widths must match tower d_model")


_SECTION_TYPES = {
    "video": TowerSection,
    "audio": TowerSection,
    "bridge": BridgeSection,
    "data": DataConfig,
    "optim": OptimSection,
    "sample": SampleSection,
    "eval": EvalSection,
}


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ValueError("config root must be an object")
    _reject_unknown(d, ExperimentConfig)
    kwargs = {}
    for key, value in d.items():
        cls = _SECTION_TYPES.get(key)
        if cls is not None:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key!r} must be an object")
            _reject_unknown(value, cls)
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def _clean(x):
        if isinstance(x, tuple):
            return [_clean(v) for v in x]
        if isinstance(x, list):
            return [_clean(v) for v in x]
        if isinstance(x, dict):
            return {k: _clean(v) for k, v in x.items()}
        return x

    return _clean(dataclasses.asdict(cfg))


def load_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def replace(cfg, **kw):
    """dataclasses.replace that also re-runs validation."""
    return dataclasses.replace(cfg, **kw)
