#!/usr/bin/env python3
"""Data-scaling study: train on nested manifests (64 / 256 / 1024 clips)
under fixed iterations across seeds and report held-out ADE/FDE per size.

Example:
    python scripts/scaling_study.py --train data/train --eval data/eval \
        --iterations 1000 --seeds 0 1 2 --out runs/scaling
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))


def _train_and_eval(spec):
    from minidrive.checkpoint import load_checkpoint
    from minidrive.evaluate import EvalSettings, evaluate
    from minidrive.model import ModelConfig
    from minidrive.rollout import InferenceNet
    from minidrive.train import TrainConfig, train

    tc = TrainConfig(manifest=spec["manifest"], iterations=spec["iterations"],
                     seed=spec["seed"], out_dir=spec["out"],
                     model=ModelConfig(guidance_mode=spec["guidance_mode"]))
    result = train(tc)
    ckpt = load_checkpoint(result.checkpoint_path)
    net = InferenceNet(ckpt.params, ckpt.config)
    metrics = evaluate(net, ckpt.stats, spec["eval_manifest"], EvalSettings())
    return {"size": spec["size"], "seed": spec["seed"], **metrics.to_dict()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", required=True, help="dataset dir with manifest_N.json subsets")
    ap.add_argument("--eval", required=True)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--guidance-mode", default="scene")
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    train_dir = Path(args.train)
    eval_manifest = Path(args.eval)
    if eval_manifest.is_dir():
        eval_manifest = eval_manifest / "manifest.json"
    jobs = []
    for size in args.sizes:
        manifest = train_dir / f"manifest_{size}.json"
        if not manifest.exists():
            manifest = train_dir / "manifest.json"
        for seed in args.seeds:
            jobs.append({"manifest": str(manifest), "iterations": args.iterations,
                         "seed": seed, "size": size,
                         "out": f"{args.out}/size{size}_seed{seed}",
                         "eval_manifest": str(eval_manifest),
                         "guidance_mode": args.guidance_mode})
    with ProcessPoolExecutor(args.workers) as ex:
        rows = list(ex.map(_train_and_eval, jobs))
    report = {"iterations": args.iterations, "rows": rows}
    Path(args.out).mkdir(parents=True, exist_ok=True)
    out = Path(args.out) / "scaling_report.json"
    out.write_text(json.dumps(report, indent=1))
    for size in args.sizes:
        vals = sorted(r["ade_4s"] for r in rows if r["size"] == size)
        med = vals[len(vals) // 2]
        print(f"size {size:5d}: median ADE@4s {med:.3f}  ({vals})")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
