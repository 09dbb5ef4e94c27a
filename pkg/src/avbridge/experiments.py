"""Desk-scale experiment runners: the fusion / conditioning / placement
ablations and the multiply-count benchmark. Sweep outputs are CSV; single
runs summarize to JSON."""

from __future__ import annotations

import csv
import json
import os
import time

import numpy as np

from . import rng as R
from .bridge import MECHANISMS, BridgeConfig, PAPER_PRESETS, build_bridge_blocks, flop_model
from .config import ExperimentConfig, config_hash, replace
from .conditioning import TimestepPair
from .tensor import Tensor, no_grad
from .train import CODE_VERSION, train

FUSION_ARMS = list(MECHANISMS) + ["none"]
PLACEMENT_ARMS = list(PAPER_PRESETS)


def _arm_config(base: ExperimentConfig, seed: int, mechanism: str | None = None,
                caption_mode: str | None = None, placement: str | None = None) -> ExperimentConfig:
    cfg = replace(base, seed=seed)
    if mechanism is not None:
        if mechanism == "none":
            cfg = replace(cfg, bridge=replace(cfg.bridge, enabled=False))
        else:
            cfg = replace(cfg, bridge=replace(cfg.bridge, enabled=True, mechanism=mechanism))
    if caption_mode is not None:
        cfg = replace(cfg, caption_mode=caption_mode)
    if placement is not None:
        cfg = replace(cfg, bridge=replace(cfg.bridge, enabled=True, placement=placement,
                                          video_layers=None, audio_layers=None))
    return cfg


def _run_arms(base: ExperimentConfig, out_dir: str, seeds: list[int],
              arms: list[tuple[str, dict]], arm_column: str, quiet: bool = True) -> dict:
    """Train every (arm, seed) cell and collect per-eval-step scores."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    summaries = {}
    for arm_name, overrides in arms:
        arm_scores = []
        for seed in seeds:
            cfg = _arm_config(base, seed, **overrides)
            run_dir = os.path.join(out_dir, f"{arm_name}_seed{seed}")
            summary = train(cfg, run_dir, quiet=quiet)
            for ev in summary["eval_history"]:
                rows.append({arm_column: arm_name, "seed": seed,
                             "eval_step": ev["step"], "av_align": ev["av_align"],
                             "config_hash": summary["config_hash"],
                             "code_version": summary["code_version"]})
            arm_scores.append(summary["final_av_align"])
        summaries[arm_name] = {
            "mean_final_av_align": float(np.mean(arm_scores)),
            "per_seed": dict(zip(map(str, seeds), arm_scores)),
        }

    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=[arm_column, "seed", "eval_step",
                                               "av_align", "config_hash", "code_version"])
        writer.writeheader()
        writer.writerows(rows)
    report = {"arms": summaries, "seeds": seeds, "csv": csv_path,
              "code_version": CODE_VERSION}
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    return report


def run_fusion_ablation(base: ExperimentConfig, out_dir: str, seeds: list[int],
                        quiet: bool = True) -> dict:
    """Five mechanisms plus the no-bridge baseline under identical budgets."""
    arms = [(m, {"mechanism": m}) for m in FUSION_ARMS]
    return _run_arms(base, out_dir, seeds, arms, "mechanism", quiet=quiet)


def run_conditioning_ablation(base: ExperimentConfig, out_dir: str, seeds: list[int],
                              quiet: bool = True) -> dict:
    """Disentangled vs shared captions on the default mechanism; paired seeds
    give both arms identical event trains."""
    arms = [(mode, {"caption_mode": mode}) for mode in ("disentangled", "shared")]
    return _run_arms(base, out_dir, seeds, arms, "caption_mode", quiet=quiet)


def run_placement_ablation(base: ExperimentConfig, out_dir: str, seeds: list[int],
                           quiet: bool = True) -> dict:
    """The five named placement presets, four bridge blocks each."""
    arms = [(p, {"placement": p}) for p in PLACEMENT_ARMS]
    return _run_arms(base, out_dir, seeds, arms, "placement", quiet=quiet)


def run_bench(mechanisms: list[str], sizes: list[tuple[int, int]], d_bridge: int = 32,
              n_heads: int = 4, seed: int = 0, repeats: int = 3) -> dict:
    """Instrumented forwards vs the analytic multiply model, plus wall time."""
    entries = []
    for mech in mechanisms:
        cfg = BridgeConfig(mechanism=mech, video_layers=(0,), audio_layers=(0,),
                           d_bridge=d_bridge, n_heads=n_heads)
        block = build_bridge_blocks(cfg, d_video=d_bridge, d_audio=d_bridge, seed=seed)[0]
        for n_v, n_a in sizes:
            g = R.stream(seed, "bench.data", n_v, n_a)
            z_v = Tensor(g.standard_normal((n_v, d_bridge)).astype(np.float32))
            z_a = Tensor(g.standard_normal((n_a, d_bridge)).astype(np.float32))
            t_pair = TimestepPair(0.5)
            with no_grad():
                t0 = time.perf_counter()
                for _ in range(repeats):
                    block.fuse_latents(z_v, z_a, t_pair)
                wall = (time.perf_counter() - t0) / repeats
            predicted = flop_model(mech, n_v, n_a, d_bridge)
            measured = block.last_mix_multiplies
            entries.append({
                "mechanism": mech, "n_v": n_v, "n_a": n_a, "d": d_bridge,
                "measured_multiplies": measured, "predicted_multiplies": predicted,
                "match": measured == predicted, "wall_time_s": wall,
            })
    return {"entries": entries, "code_version": CODE_VERSION}


def write_bench_report(report: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bench.csv")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["mechanism", "n_v", "n_a", "d",
                                               "measured_multiplies", "predicted_multiplies",
                                               "match", "wall_time_s"])
        writer.writeheader()
        writer.writerows(report["entries"])
    with open(os.path.join(out_dir, "bench.json"), "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    return path
