#!/usr/bin/env python3
"""Train the desk-scale model on a generated dataset.

Example:
    python scripts/train_desk.py --data data/train --iterations 5000 --out runs/main
"""

import argparse
import os
import sys
from pathlib import Path

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True, help="dataset dir (or manifest path)")
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--beta-video", type=float, default=1.0)
    ap.add_argument("--guidance-mode", default="scene", choices=["scene", "fixed"])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    from minidrive.model import ModelConfig
    from minidrive.train import TrainConfig, train

    manifest = Path(args.data)
    if manifest.is_dir():
        manifest = manifest / "manifest.json"
    tc = TrainConfig(manifest=str(manifest), iterations=args.iterations,
                     seed=args.seed, batch_size=args.batch_size,
                     out_dir=args.out,
                     model=ModelConfig(beta_video=args.beta_video,
                                       guidance_mode=args.guidance_mode))
    result = train(tc)
    print(f"final loss {result.log[-1]['loss']:.4f} -> {result.checkpoint_path}")


if __name__ == "__main__":
    main()
