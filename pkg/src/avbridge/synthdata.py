"""Synchronized audio/video latent pairs with controllable caption
disentanglement, plus the onset-matching alignment metric.

A sample is built from one shared event train: both modalities render a
smooth background plus class-directed Gaussian pulses at the positions
nearest to each event time, so a perfect generator scores 1.0 on the
alignment metric and independent generators score near 0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as R
from .blobio import read_blob, read_json, write_blob, write_json

# token-id layout of the toy vocabulary (64 entries, id 0 = null)
CLASS_TOKEN_BASE = 1  # class c -> token c + 1
VISUAL_DISTRACTOR_RANGE = (16, 32)
AUDIO_DISTRACTOR_RANGE = (32, 48)

_CLASS_DIR_ENTROPY = 0xC1A55D1


@dataclass(frozen=True)
class DataConfig:
    seq_v: int = 24
    d_v: int = 64
    seq_a: int = 48
    d_a: int = 48
    n_classes: int = 8
    event_rate: float = 2.0      # Poisson mean; count clipped to [1, max_events]
    max_events: int = 4
    pulse_amp: float = 5.0
    pulse_width_v: float = 0.75  # gaussian sigma, video frame units
    pulse_width_a: float = 1.5   # gaussian sigma, audio step units
    background_amp: float = 0.1
    noise_floor: float = 0.05
    n_distractors: int = 2       # per modality

    def __post_init__(self):
        if min(self.seq_v, self.seq_a, self.d_v, self.d_a) < 1:
            raise ValueError("sequence lengths and widths must be positive")
        if not 1 <= self.max_events:
            raise ValueError("max_events must be >= 1")
        if self.n_classes < 1 or self.n_classes > 8:
            raise ValueError("n_classes must lie in [1, 8] (token layout)")
        if min(self.d_v, self.d_a) < self.n_classes:
            raise ValueError("latent width must be >= n_classes for orthogonal pulses")
        if self.event_rate <= 0 or self.pulse_amp <= 0:
            raise ValueError("event_rate and pulse_amp must be positive")
        if self.n_distractors < 0 or self.n_distractors > 16:
            raise ValueError("n_distractors out of range")

    @property
    def min_gap(self) -> float:
        # two positions of the coarser modality, so onsets stay resolvable
        return 2.0 / min(self.seq_v, self.seq_a)

    @property
    def max_text_len(self) -> int:
        # shared captions carry both distractor sets
        return 1 + 2 * self.n_distractors


@dataclass(frozen=True)
class EventTrain:
    times: tuple[float, ...]
    rate: float

    def __post_init__(self):
        ts = self.times
        if any(not 0.0 <= t < 1.0 for t in ts):
            raise ValueError("event times must lie in [0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("event times must be strictly increasing")


@dataclass
class SyncSample:
    events: EventTrain
    x_v: np.ndarray
    x_a: np.ndarray
    tokens_v: list[int]
    tokens_a: list[int]
    tokens_shared: list[int]
    event_class: int


def class_directions(d: int, n_classes: int) -> np.ndarray:
    """Fixed orthonormal pulse directions, one per event class."""
    g = R.stream(_CLASS_DIR_ENTROPY, "class_dirs", d, n_classes)
    q, _ = np.linalg.qr(g.standard_normal((d, n_classes)))
    return q.T.astype(np.float32)  # (n_classes, d)


def event_index(t: float, n: int) -> int:
    """Grid index nearest to event time t (positions i/n)."""
    return min(n - 1, int(round(t * n)))


def _draw_events(seed: int, cfg: DataConfig) -> EventTrain:
    g = R.stream(seed, "data.events")
    count = int(np.clip(g.poisson(cfg.event_rate), 1, cfg.max_events))
    times = np.sort(g.uniform(0.0, 1.0, size=count))
    kept: list[float] = []
    for t in times:
        if not kept or t - kept[-1] >= cfg.min_gap:
            kept.append(float(t))
    return EventTrain(tuple(kept), cfg.event_rate)


def _render(seq_len: int, d: int, width: float, events: EventTrain, direction: np.ndarray,
            amp: float, bg_amp: float, noise: float, g: np.random.Generator) -> np.ndarray:
    pos = np.arange(seq_len, dtype=np.float64)
    # smooth background: one slow sinusoid per latent dim
    phases = g.uniform(0, 2 * np.pi, size=d)
    freqs = g.integers(1, 3, size=d)
    x = bg_amp * np.sin(2 * np.pi * freqs * pos[:, None] / seq_len + phases)
    for t in events.times:
        c = event_index(t, seq_len)
        bump = np.exp(-0.5 * ((pos - c) / width) ** 2)
        x += amp * bump[:, None] * direction
    if noise > 0:
        x += noise * g.standard_normal((seq_len, d))
    return x.astype(np.float32)


def gen_sample(seed: int, cfg: DataConfig) -> SyncSample:
    """Deterministic per seed: one event train rendered into both latents,
    plus class + distractor token sets."""
    events = _draw_events(seed, cfg)
    g = R.stream(seed, "data.render")
    cls = int(R.stream(seed, "data.class").integers(0, cfg.n_classes))
    dirs_v = class_directions(cfg.d_v, cfg.n_classes)
    dirs_a = class_directions(cfg.d_a, cfg.n_classes)
    x_v = _render(cfg.seq_v, cfg.d_v, cfg.pulse_width_v, events, dirs_v[cls],
                  cfg.pulse_amp, cfg.background_amp, cfg.noise_floor, g)
    x_a = _render(cfg.seq_a, cfg.d_a, cfg.pulse_width_a, events, dirs_a[cls],
                  cfg.pulse_amp, cfg.background_amp, cfg.noise_floor, g)

    gd = R.stream(seed, "data.distractors")
    vis = sorted(gd.choice(np.arange(*VISUAL_DISTRACTOR_RANGE), size=cfg.n_distractors,
                           replace=False).tolist()) if cfg.n_distractors else []
    aud = sorted(gd.choice(np.arange(*AUDIO_DISTRACTOR_RANGE), size=cfg.n_distractors,
                           replace=False).tolist()) if cfg.n_distractors else []
    class_tok = cls + CLASS_TOKEN_BASE
    tokens_v = [class_tok] + [int(t) for t in vis]
    tokens_a = [class_tok] + [int(t) for t in aud]
    tokens_shared = sorted(set(tokens_v) | set(tokens_a))
    return SyncSample(events, x_v, x_a, tokens_v, tokens_a, tokens_shared, cls)


def make_captions(sample: SyncSample, mode: str) -> tuple[list[int], list[int]]:
    """disentangled -> modality-pure token sets; shared -> the union on both."""
    if mode == "disentangled":
        return list(sample.tokens_v), list(sample.tokens_a)
    if mode == "shared":
        return list(sample.tokens_shared), list(sample.tokens_shared)
    raise ValueError(f"unknown caption mode {mode!r}")


# -- onset detection and the alignment score -----------------------------


def rolling_median(x: np.ndarray, window: int) -> np.ndarray:
    """Centered per-coordinate rolling median; the window clips at the ends."""
    n = x.shape[0]
    half = window // 2
    out = np.empty_like(x)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = np.median(x[lo:hi], axis=0)
    return out


def detect_onsets(seq: np.ndarray, threshold: float, median_window: int = 9) -> list[int]:
    """Indices of strict local maxima of the deviation-from-rolling-median
    energy that reach the threshold; plateau ties go to the earlier index."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    seq = np.asarray(seq, dtype=np.float64)
    e = np.linalg.norm(seq - rolling_median(seq, median_window), axis=1)
    n = e.shape[0]
    onsets = []
    for i in range(n):
        if e[i] < threshold:
            continue
        left_ok = i == 0 or e[i] > e[i - 1]
        right_ok = i == n - 1 or e[i] >= e[i + 1]
        if left_ok and right_ok:
            onsets.append(i)
    return onsets


def toy_av_align(onsets_v: list[int], onsets_a: list[int], window: float = 1.0,
                 scale: float = 0.5) -> float:
    """Matched-onset IoU: |M| / (|V| + |A| - |M|).

    Audio indices convert to video frame units via ``scale`` (seq_v/seq_a).
    Matching is greedy in time order, each video onset taking the earliest
    unmatched audio onset within +-window frames, which attains the maximum
    matching for interval compatibility and is therefore symmetric.
    """
    if window < 0:
        raise ValueError("window must be non-negative")
    v = sorted(float(i) for i in onsets_v)
    a = sorted(float(i) * scale for i in onsets_a)
    if not v and not a:
        return 1.0
    if not v or not a:
        return 0.0
    matched = 0
    j = 0
    for t in v:
        while j < len(a) and a[j] < t - window:
            j += 1
        if j < len(a) and abs(a[j] - t) <= window:
            matched += 1
            j += 1
    return matched / (len(v) + len(a) - matched)


# -- dataset persistence --------------------------------------------------

DATASET_FORMAT_VERSION = 1


def write_dataset(samples: list[SyncSample], out_dir: str) -> str:
    """One blob per sample plus a manifest listing tokens, events and tensor
    locations. Returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        blob_name = f"sample_{i:05d}.bin"
        entries = write_blob(os.path.join(out_dir, blob_name),
                             {"x_v": s.x_v, "x_a": s.x_a})
        records.append({
            "id": i,
            "event_class": s.event_class,
            "event_times": list(s.events.times),
            "event_rate": s.events.rate,
            "tokens_v": s.tokens_v,
            "tokens_a": s.tokens_a,
            "tokens_shared": s.tokens_shared,
            "blob": blob_name,
            "tensors": entries,
        })
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_json(manifest_path, {"format_version": DATASET_FORMAT_VERSION, "samples": records})
    return manifest_path


def read_dataset(in_dir: str) -> list[SyncSample]:
    manifest = read_json(os.path.join(in_dir, "manifest.json"))
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')}")
    samples = []
    for rec in manifest["samples"]:
        arrays = read_blob(os.path.join(in_dir, rec["blob"]), rec["tensors"])
        samples.append(SyncSample(
            events=EventTrain(tuple(rec["event_times"]), rec["event_rate"]),
            x_v=arrays["x_v"], x_a=arrays["x_a"],
            tokens_v=list(rec["tokens_v"]), tokens_a=list(rec["tokens_a"]),
            tokens_shared=list(rec["tokens_shared"]), event_class=rec["event_class"]))
    return samples
