"""Training loop: synthetic batches, joint loss, AdamW, periodic checkpoints
and alignment evaluation on held-out event trains."""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import rng as R
from .bridge import BridgeConfig, preset_placement
from .checkpoint import load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from .config import ExperimentConfig, config_hash, config_to_dict
from .model import FusedModel
from .objectives import TrainingBatch, joint_loss
from .optim import AdamW, lr_at
from .sampler import SampleSpec, sample_joint
from .synthdata import detect_onsets, gen_sample, make_captions, toy_av_align
from .towers import TowerConfig, freeze_select

CODE_VERSION = "0.1.0"

_TRAIN_KEY = 0x5A11
_EVAL_KEY = 0xE7A1


def tower_config(section, trainable_suffix_override=None) -> TowerConfig:
    return TowerConfig(
        n_layers=section.n_layers, d_model=section.d_model, n_heads=section.n_heads,
        d_text=section.d_text, seq_len=section.seq_len,
        trainable_suffix=section.trainable_suffix if trainable_suffix_override is None
        else trainable_suffix_override,
        vocab=section.vocab)


def resolve_bridge_config(cfg: ExperimentConfig) -> BridgeConfig | None:
    b = cfg.bridge
    if not b.enabled:
        return None
    if b.video_layers is not None:
        v, a = b.video_layers, b.audio_layers
    else:
        v, a = preset_placement(b.placement, cfg.video.n_layers, cfg.audio.n_layers)
    return BridgeConfig(mechanism=b.mechanism, video_layers=v, audio_layers=a,
                        d_bridge=b.d_bridge, n_heads=b.n_heads)


def build_model(cfg: ExperimentConfig, dtype=np.float32) -> FusedModel:
    model = FusedModel(tower_config(cfg.video), tower_config(cfg.audio),
                       resolve_bridge_config(cfg), seed=cfg.seed, dtype=dtype)
    if cfg.video.trainable_suffix is not None:
        freeze_select(model.video, cfg.video.trainable_suffix)
    if cfg.audio.trainable_suffix is not None:
        freeze_select(model.audio, cfg.audio.trainable_suffix)
    return model


def sample_seed(run_seed: int, key: int, index: int) -> int:
    """Collision-free per-sample seed derived from the run seed."""
    ss = np.random.SeedSequence(entropy=int(run_seed), spawn_key=(key, int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _pad_tokens(tokens: list[int], length: int) -> list[int]:
    if len(tokens) > length:
        raise ValueError("token list longer than the configured text length")
    return tokens + [0] * (length - len(tokens))


def make_batch(cfg: ExperimentConfig, step: int):
    """Batch of paired samples plus the per-item times and noise draws.
    Null-condition dropout is applied here, independently per modality."""
    B = cfg.optim.batch_size
    n_text = cfg.data.max_text_len
    xs_v, xs_a, tok_v, tok_a = [], [], [], []
    for i in range(B):
        s = gen_sample(sample_seed(cfg.seed, _TRAIN_KEY, step * B + i), cfg.data)
        tv, ta = make_captions(s, cfg.caption_mode)
        xs_v.append(s.x_v)
        xs_a.append(s.x_a)
        tok_v.append(_pad_tokens(tv, n_text))
        tok_a.append(_pad_tokens(ta, n_text))
    tok_v = np.array(tok_v, dtype=np.int64)
    tok_a = np.array(tok_a, dtype=np.int64)
    drop = R.stream(cfg.seed, "train.drop", step).uniform(size=(B, 2))
    tok_v[drop[:, 0] < cfg.optim.uncond_prob] = 0
    tok_a[drop[:, 1] < cfg.optim.uncond_prob] = 0

    batch = TrainingBatch(np.stack(xs_v), np.stack(xs_a), tok_v, tok_a)
    t_a = R.stream(cfg.seed, "train.t", step).uniform(size=B)
    g = R.stream(cfg.seed, "train.noise", step)
    eps_v = g.standard_normal(batch.x_v.shape).astype(np.float32)
    eps_a = g.standard_normal(batch.x_a.shape).astype(np.float32)
    return batch, t_a, eps_v, eps_a


def detect_threshold(cfg: ExperimentConfig) -> float:
    if cfg.eval.detect_threshold is not None:
        return cfg.eval.detect_threshold
    return 3.0 * cfg.data.noise_floor if cfg.data.noise_floor > 0 else 1.0


def evaluate_alignment(model, cfg: ExperimentConfig, n_pairs: int | None = None,
                       steps: int | None = None) -> tuple[float, list[float]]:
    """Generate pairs conditioned on held-out captions and score onset
    alignment between the two generated latents."""
    n_pairs = n_pairs if n_pairs is not None else cfg.eval.eval_pairs
    steps = steps if steps is not None else cfg.eval.eval_sample_steps
    thr = detect_threshold(cfg)
    scale = cfg.data.seq_v / cfg.data.seq_a
    scores = []
    for i in range(n_pairs):
        seed_i = sample_seed(cfg.seed, _EVAL_KEY, i)
        s = gen_sample(seed_i, cfg.data)
        tv, ta = make_captions(s, cfg.caption_mode)
        spec = SampleSpec(steps=steps, w_v=cfg.sample.w_v, w_a=cfg.sample.w_a,
                          seed=seed_i, text_v=tv, text_a=ta,
                          cfg_branches=cfg.sample.cfg_branches)
        x_v, x_a, _ = sample_joint(model, spec)
        ov = detect_onsets(x_v, thr)
        oa = detect_onsets(x_a, thr)
        scores.append(toy_av_align(ov, oa, window=cfg.eval.align_window, scale=scale))
    return float(np.mean(scores)), scores


def train(cfg: ExperimentConfig, out_dir: str, resume_from: str | None = None,
          quiet: bool = True) -> dict:
    """Run the training loop; returns the final summary (also written to
    out_dir/summary.json). Step metrics stream to out_dir/metrics.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(cfg)
    optimizer = AdamW(model.named_parameters(), lr=cfg.optim.lr,
                      betas=(cfg.optim.beta1, cfg.optim.beta2),
                      weight_decay=cfg.optim.weight_decay)
    start_step = 0
    if resume_from is not None:
        manifest, arrays = load_checkpoint(resume_from)
        restore_model(model, arrays)
        restore_optimizer(optimizer, arrays, manifest)
        start_step = manifest["step"]

    snapshot = config_to_dict(cfg)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    eval_history = []
    t0 = time.time()
    mode = "a" if start_step > 0 else "w"
    last = {"loss_total": None, "loss_audio": None, "loss_video": None}
    with open(metrics_path, mode) as mf:
        for step in range(start_step, cfg.optim.total_steps):
            batch, t_a, eps_v, eps_a = make_batch(cfg, step)
            total, loss_a, loss_v = joint_loss(
                model, batch, t_a, eps_v, eps_a,
                (cfg.optim.loss_weight_audio, cfg.optim.loss_weight_video))
            optimizer.zero_grad()
            total.backward()
            lr = lr_at(step, cfg.optim.lr, cfg.optim.warmup_steps,
                       cfg.optim.total_steps, cfg.optim.min_lr)
            optimizer.step(lr)
            last = {"loss_total": total.item(), "loss_audio": loss_a.item(),
                    "loss_video": loss_v.item()}
            mf.write(json.dumps({"step": step, **last, "lr": lr}) + "\n")
            done = step + 1
            if done % cfg.optim.checkpoint_every == 0 and done < cfg.optim.total_steps:
                save_checkpoint(os.path.join(out_dir, f"ckpt_{done:06d}"),
                                model, optimizer, done, snapshot)
            if done % cfg.eval.eval_every == 0 or done == cfg.optim.total_steps:
                mean_score, scores = evaluate_alignment(model, cfg)
                eval_history.append({"step": done, "av_align": mean_score, "scores": scores})
                if not quiet:
                    print(f"[{out_dir}] step {done} loss {last['loss_total']:.4f} "
                          f"av_align {mean_score:.3f}")

    save_checkpoint(os.path.join(out_dir, "final"), model, optimizer,
                    cfg.optim.total_steps, snapshot)
    summary = {
        "config_hash": config_hash(cfg),
        "code_version": CODE_VERSION,
        "seed": cfg.seed,
        "steps": cfg.optim.total_steps,
        "final_loss_total": last["loss_total"],
        "final_loss_audio": last["loss_audio"],
        "final_loss_video": last["loss_video"],
        "final_av_align": eval_history[-1]["av_align"] if eval_history else None,
        "eval_history": eval_history,
        "wall_time_s": time.time() - t0,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return summary
