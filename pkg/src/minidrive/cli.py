"""Command-line entry point.

Subcommands: gen-data, train, rollout, eval, bench-kv, inspect-mask.
A JSON config file (--config) supplies model/train settings; --seed and
--out override it.  --json prints machine-readable reports to stdout.
Unknown flags exit 2 with usage on stderr; runtime failures exit 1 with a
structured message.
"""

from __future__ import annotations

import os

# these small matmul shapes run fastest single-threaded; set before numpy loads
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _model_config(cfg: dict):
    from .model import ModelConfig
    return ModelConfig(**cfg.get("model", {}))


def cmd_gen_data(args, cfg) -> int:
    from .data import generate_dataset, write_manifest_subset
    from .sim import SCENARIOS
    scenarios = SCENARIOS if args.scenarios == "all" else tuple(args.scenarios.split(","))
    for s in scenarios:
        if s not in SCENARIOS:
            raise ValueError(f"unknown scenario {s!r}")
    manifest = generate_dataset(args.out, args.clips, args.chunks, args.seed,
                                scenarios=scenarios)
    subsets = []
    for n in args.subsets:
        sub = Path(args.out) / f"manifest_{n}.json"
        write_manifest_subset(manifest, n, sub)
        subsets.append(str(sub))
    result = {"manifest": str(manifest), "clips": args.clips, "subsets": subsets}
    print(json.dumps(result) if args.json else f"wrote {args.clips} clips -> {manifest}")
    return 0


def cmd_train(args, cfg) -> int:
    from .train import TrainConfig, train
    tc_kwargs = dict(cfg.get("train", {}))
    tc_kwargs["model"] = _model_config(cfg)
    if args.manifest:
        tc_kwargs["manifest"] = args.manifest
    if args.iterations:
        tc_kwargs["iterations"] = args.iterations
    if args.seed is not None:
        tc_kwargs["seed"] = args.seed
    if args.out:
        tc_kwargs["out_dir"] = args.out
    result = train(TrainConfig(**tc_kwargs))
    summary = {"iterations": result.config.iterations,
               "final_loss": result.log[-1]["loss"],
               "checkpoint": str(result.checkpoint_path)}
    print(json.dumps(summary) if args.json else
          f"trained {summary['iterations']} iters, loss {summary['final_loss']:.4f}, "
          f"checkpoint {summary['checkpoint']}")
    return 0


def _load_net(checkpoint_path):
    from .checkpoint import load_checkpoint
    from .rollout import InferenceNet
    ckpt = load_checkpoint(checkpoint_path)
    return InferenceNet(ckpt.params, ckpt.config), ckpt


def cmd_eval(args, cfg) -> int:
    from .evaluate import EvalSettings, evaluate, standstill_metrics
    net, ckpt = _load_net(args.checkpoint)
    settings = EvalSettings(horizon_seconds=args.horizon, strategy=args.strategy,
                            budget_video=args.budget_video,
                            budget_action=args.budget_action, lam=args.lam,
                            seed=args.seed or 0, max_clips=args.max_clips)
    report = evaluate(net, ckpt.stats, args.manifest, settings).to_dict()
    if args.baseline:
        report["standstill"] = standstill_metrics(args.manifest, settings).to_dict()
    if args.json:
        print(json.dumps(report))
    else:
        print(f"ADE@3s {report['ade_3s']:.3f}  FDE@3s {report['fde_3s']:.3f}  "
              f"ADE@4s {report['ade_4s']:.3f}  FDE@4s {report['fde_4s']:.3f}  "
              f"({report['clip_count']} clips)")
        for name, row in sorted(report["per_scenario"].items()):
            print(f"  {name:18s} ADE@4s {row['ade_4s']:.3f}  FDE@4s {row['fde_4s']:.3f}  "
                  f"n={row['count']}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return 0


def cmd_rollout(args, cfg) -> int:
    from .data import manifest_clip_paths, read_clip
    from .evaluate import EvalSettings, evaluate_clip
    from .tokens import decode_video_chunk
    net, ckpt = _load_net(args.checkpoint)
    paths = manifest_clip_paths(args.manifest)
    clip = read_clip(paths[args.clip])
    settings = EvalSettings(strategy=args.strategy, dream=args.dream,
                            budget_video=args.budget_video,
                            budget_action=args.budget_action, lam=args.lam,
                            seed=args.seed or 0)
    result = evaluate_clip(net, ckpt.stats, clip, settings, clip_index=args.clip)
    report = {
        "clip": str(paths[args.clip]), "scenario": result["scenario"],
        "dream": args.dream,
        "predicted_actions": {str(k): v.tolist() for k, v in result["predicted"].items()},
        "window_errors": [w.tolist() for w in result["windows"]],
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rollout.json").write_text(json.dumps(report))
        with open(out / "retention.jsonl", "w") as fh:
            for step, rep in enumerate(result["retention"]):
                rec = rep.to_record()
                rec["step"] = step
                fh.write(json.dumps(rec) + "\n")
        if args.frames:
            _write_frames(out, net, result, ckpt.config)
    print(json.dumps({"clip": report["clip"],
                      "mean_window_error": float(np.mean([np.mean(w) for w in report["window_errors"]]))})
          if args.json else f"rolled out {report['clip']} ({result['scenario']})")
    return 0


def _write_frames(out: Path, net, result, config) -> None:
    from .tokens import decode_video_chunk
    for k, gen in result.get("gens", {}).items():
        frames = decode_video_chunk(gen.latent, net["frozen.patch_projector"],
                                    config.frames_per_chunk, config.raster_h,
                                    config.raster_w, config.channels)
        for i, frame in enumerate(frames):
            _write_ppm(out / f"chunk{k}_frame{i}.ppm", frame)


def _write_ppm(path, frame) -> None:
    img = (np.clip(frame, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_bench_kv(args, cfg) -> int:
    from .bench import bench_kv, write_profile_records
    net, ckpt = _load_net(args.checkpoint)
    report = bench_kv(net, ckpt.stats, args.manifest,
                      strategies=tuple(args.strategies.split(",")),
                      horizon_chunks=args.horizon_chunks,
                      budget_video=args.budget_video,
                      budget_action=args.budget_action, lam=args.lam,
                      eval_seed=args.seed or 0, max_clips=args.max_clips)
    if args.records:
        write_profile_records(args.records, report)
    slim = {k: v for k, v in report.items() if k != "strategies"}
    slim["strategies"] = {
        name: {kk: vv for kk, vv in body.items() if kk != "profile_steps"}
        for name, body in report["strategies"].items()
    }
    if args.json:
        print(json.dumps(slim))
    else:
        for name, body in slim["strategies"].items():
            m = body["metrics"]
            print(f"{name:10s} ADE@4s {m['ade_4s']:.3f}  FDE@4s {m['fde_4s']:.3f}  "
                  f"cached_floats {body['cached_floats_final']}  "
                  f"flops/layer {body['attention_flops_final']}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return 0


def cmd_inspect_mask(args, cfg) -> int:
    from .layout import (build_guidance_mask, build_ego_mask,
                         build_sequence_layout, build_teacher_forcing_mask,
                         write_pgm)
    model = _model_config(cfg)
    layout = build_sequence_layout(args.chunks, model.n_video, model.n_action,
                                   model.guidance_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    masks = {
        "teacher_forcing": build_teacher_forcing_mask(layout),
        "guidance": build_guidance_mask(layout),
        "ego": build_ego_mask(layout),
    }
    for name, mask in masks.items():
        write_pgm(out / f"{name}_K{args.chunks}.pgm", mask.allowed)
    info = {"chunks": args.chunks, "length": layout.length,
            "files": [f"{n}_K{args.chunks}.pgm" for n in masks]}
    print(json.dumps(info) if args.json else
          f"wrote {len(masks)} masks (sequence length {layout.length}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minidrive",
                                     description="desk-scale video-action driving policy")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--json", action="store_true", help="machine-readable stdout")
    parser.add_argument("--seed", type=int, default=None)
    # the same flags are accepted after the subcommand; SUPPRESS keeps the
    # top-level value when the subcommand does not restate them
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("gen-data", help="generate synthetic clips + manifest")
    p.add_argument("--scenarios", default="all")
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--chunks", type=int, default=5)
    p.add_argument("--subsets", type=int, nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = add_parser("train", help="train from a manifest")
    p.add_argument("--manifest", default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = add_parser("eval", help="grounded rollout metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--horizon", type=float, default=4.0)
    p.add_argument("--strategy", default="full")
    p.add_argument("--budget-video", type=int, default=128)
    p.add_argument("--budget-action", type=int, default=32)
    p.add_argument("--lam", type=float, default=0.07)
    p.add_argument("--max-clips", type=int, default=None)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = add_parser("rollout", help="roll out one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip", type=int, default=0)
    p.add_argument("--strategy", default="full")
    p.add_argument("--dream", action="store_true")
    p.add_argument("--frames", action="store_true")
    p.add_argument("--budget-video", type=int, default=128)
    p.add_argument("--budget-action", type=int, default=32)
    p.add_argument("--lam", type=float, default=0.07)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rollout)

    p = add_parser("bench-kv", help="memory-strategy comparison")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategies", default="full,fifo,selective")
    p.add_argument("--horizon-chunks", type=int, default=75)
    p.add_argument("--budget-video", type=int, default=128)
    p.add_argument("--budget-action", type=int, default=32)
    p.add_argument("--lam", type=float, default=0.07)
    p.add_argument("--max-clips", type=int, default=None)
    p.add_argument("--records", default=None, help="write per-step JSONL here")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_kv)

    p = add_parser("inspect-mask", help="render attention masks as PGM")
    p.add_argument("--chunks", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_inspect_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.fn(args, cfg)
    except Exception as exc:  # structured failure -> exit 1
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
