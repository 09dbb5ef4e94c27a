"""Command-line surface.

Subcommands: train, sample, ablate-fusion, ablate-conditioning,
ablate-placement, bench, gradcheck, caption. All take --config/--seed/--out
where meaningful; configs are JSON documents over the schema in config.py.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, restore_model
from .config import (ExperimentConfig, config_from_dict, config_to_dict, load_config,
                     replace, save_config)
from .experiments import (FUSION_ARMS, run_bench, run_conditioning_ablation,
                          run_fusion_ablation, run_placement_ablation, write_bench_report)
from .gradcheck_suite import THRESHOLD, run_suite
from .synthdata import (EventTrain, SyncSample, detect_onsets, toy_av_align, write_dataset)
from .train import build_model, detect_threshold, train


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip() != ""]


def _parse_tokens(text: str | None) -> list[int]:
    if not text:
        return [0]
    return [int(s) for s in text.split(",")]


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or "runs/train"
    summary = train(cfg, out, resume_from=args.resume, quiet=args.quiet)
    print(json.dumps({k: summary[k] for k in
                      ("final_loss_total", "final_loss_audio", "final_loss_video",
                       "final_av_align", "config_hash", "seed")}, indent=2))
    return 0


def cmd_sample(args) -> int:
    from .sampler import SampleSpec, sample_joint

    manifest, arrays = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(manifest["config"]) if manifest["config"] else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    model = build_model(cfg)
    restore_model(model, arrays)
    spec = SampleSpec(
        steps=args.steps if args.steps is not None else cfg.sample.steps,
        w_v=args.wv if args.wv is not None else cfg.sample.w_v,
        w_a=args.wa if args.wa is not None else cfg.sample.w_a,
        seed=cfg.seed,
        text_v=_parse_tokens(args.text_v),
        text_a=_parse_tokens(args.text_a),
        cfg_branches=cfg.sample.cfg_branches)
    x_v, x_a, log = sample_joint(model, spec)

    out = args.out or "runs/sample"
    os.makedirs(out, exist_ok=True)
    thr = detect_threshold(cfg)
    onsets_v = detect_onsets(x_v, thr)
    onsets_a = detect_onsets(x_a, thr)
    score = toy_av_align(onsets_v, onsets_a, window=cfg.eval.align_window,
                         scale=cfg.data.seq_v / cfg.data.seq_a)
    times = tuple(i / cfg.data.seq_v for i in onsets_v)
    sample = SyncSample(events=EventTrain(times, rate=float(len(times))),
                        x_v=x_v, x_a=x_a, tokens_v=spec.text_v, tokens_a=spec.text_a,
                        tokens_shared=sorted(set(spec.text_v) | set(spec.text_a)),
                        event_class=-1)
    write_dataset([sample], os.path.join(out, "latents"))
    with open(os.path.join(out, "onsets.json"), "w") as f:
        json.dump({"video": onsets_v, "audio": onsets_a, "threshold": thr}, f, indent=2)
    with open(os.path.join(out, "align.json"), "w") as f:
        json.dump({"toy_av_align": score}, f, indent=2)
    with open(os.path.join(out, "trajectory.jsonl"), "w") as f:
        for rec in log:
            f.write(json.dumps(rec) + "\n")
    print(json.dumps({"toy_av_align": score, "onsets_video": onsets_v,
                      "onsets_audio": onsets_a, "out": out}, indent=2))
    return 0


def _cmd_ablate(args, runner, default_out: str) -> int:
    cfg = _load_cfg(args)
    seeds = _parse_seeds(args.seeds)
    report = runner(cfg, args.out or default_out, seeds, quiet=args.quiet)
    print(json.dumps(report["arms"], indent=2))
    return 0


def cmd_bench(args) -> int:
    mechanisms = args.mechanisms.split(",") if args.mechanisms else [m for m in FUSION_ARMS if m != "none"]
    sizes = []
    for pair in args.sizes.split(","):
        n_v, n_a = pair.split("x")
        sizes.append((int(n_v), int(n_a)))
    report = run_bench(mechanisms, sizes, d_bridge=args.d, n_heads=args.heads)
    out = args.out or "runs/bench"
    write_bench_report(report, out)
    mismatches = [e for e in report["entries"] if not e["match"]]
    print(json.dumps(report["entries"], indent=2))
    if mismatches:
        print(f"{len(mismatches)} multiply-count mismatches", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed or 0)
    worst_name, worst = max(results.items(), key=lambda kv: kv[1])
    for name, err in results.items():
        status = "OK" if err < THRESHOLD else "FAIL"
        print(f"{name:24s} {err:.3e}  {status}")
    print(f"worst: {worst_name} {worst:.3e} (threshold {THRESHOLD:g})")
    return 0 if worst < THRESHOLD else 1


def cmd_caption(args) -> int:
    from .hvgc import HTTPBackend, MockBackend, TransportError, caption_items

    if args.backend == "mock":
        backend = MockBackend()
        clock = None  # deterministic stage counter
    else:
        import time

        try:
            backend = HTTPBackend()
        except TransportError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        clock = time.time
    with open(args.input) as f:
        metas = [line for line in f.read().splitlines() if line.strip()]
    out = args.out or "caption_records.jsonl"
    try:
        ok, failed = caption_items(backend, metas, out, clock=clock)
    except TransportError as e:
        print(f"error: transport failure: {e}", file=sys.stderr)
        return 1
    print(json.dumps({"ok": ok, "failed": failed, "records": out}))
    return 0


def cmd_show_config(args) -> int:
    cfg = _load_cfg(args)
    print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avbridge",
                                description="Dual-tower audio/video latent diffusion, desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=False):
        sp.add_argument("--config", help="JSON config path (defaults otherwise)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--quiet", action="store_true", default=False)
        if seeds:
            sp.add_argument("--seeds", default="0,1,2", help="comma-separated run seeds")

    sp = sub.add_parser("train", help="train the fused model on synthetic data")
    common(sp)
    sp.add_argument("--resume", default=None, help="checkpoint dir to resume from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="generate one latent pair from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--wv", type=float, default=None, help="video guidance scale")
    sp.add_argument("--wa", type=float, default=None, help="audio guidance scale")
    sp.add_argument("--text-v", default=None, help="comma-separated token ids")
    sp.add_argument("--text-a", default=None, help="comma-separated token ids")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("ablate-fusion", help="five mechanisms + no-bridge baseline")
    common(sp, seeds=True)
    sp.set_defaults(fn=lambda a: _cmd_ablate(a, run_fusion_ablation, "runs/ablate_fusion"))

    sp = sub.add_parser("ablate-conditioning", help="disentangled vs shared captions")
    common(sp, seeds=True)
    sp.set_defaults(fn=lambda a: _cmd_ablate(a, run_conditioning_ablation, "runs/ablate_conditioning"))

    sp = sub.add_parser("ablate-placement", help="the five placement presets")
    common(sp, seeds=True)
    sp.set_defaults(fn=lambda a: _cmd_ablate(a, run_placement_ablation, "runs/ablate_placement"))

    sp = sub.add_parser("bench", help="instrumented multiply counts vs the analytic model")
    sp.add_argument("--mechanisms", default=None, help="comma-separated; default all five")
    sp.add_argument("--sizes", default="8x4,16x8,32x16", help="n_vxn_a pairs")
    sp.add_argument("--d", type=int, default=32, help="bridge width")
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("gradcheck", help="finite-difference suite over all ops")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("caption", help="run the captioning pipeline over a metadata file")
    sp.add_argument("--input", required=True, help="one metadata line per item")
    sp.add_argument("--backend", choices=("mock", "http"), default="mock")
    sp.add_argument("--out", default=None, help="records JSONL path (append)")
    sp.set_defaults(fn=cmd_caption)

    sp = sub.add_parser("show-config", help="print the resolved config")
    common(sp)
    sp.set_defaults(fn=cmd_show_config)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
