"""KV-memory benchmark: accuracy under each strategy on the eval manifest
plus analytic memory/FLOP profiles at a long horizon, merged into one
report.  A fixed large-scale reference row is embedded for context."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .evaluate import EvalSettings, evaluate
from .rollout import InferenceNet, profile_memory_flops
from .tokens import ActionStats

# Published large-scale comparison row (context only; desk-scale numbers
# are not expected to reproduce it).
REFERENCE_LARGE_SCALE = {
    "full": {"ade_4s": 0.83, "fde_4s": 2.47, "mem_gb": 3.07, "gflops": 17.37},
    "fifo": {"ade_4s": 1.40, "fde_4s": 3.47, "mem_gb": 0.25, "gflops": 1.05},
    "selective": {"ade_4s": 0.89, "fde_4s": 2.52, "mem_gb": 0.25, "gflops": 1.44},
    "reduction_claim": "over 12x",
}


def bench_kv(net: InferenceNet, stats: ActionStats, manifest_path,
             strategies=("full", "fifo", "selective"), horizon_chunks: int = 75,
             budget_video: int = 128, budget_action: int = 32,
             lam: float = 0.07, eval_seed: int = 0,
             horizon_seconds: float = 4.0, max_clips: int | None = None) -> dict:
    """Accuracy + analytic cost per strategy; one JSON-ready report."""
    if not strategies:
        raise ValueError("need at least one strategy")
    report = {"horizon_chunks": horizon_chunks,
              "budgets": {"video": budget_video, "action": budget_action},
              "lambda": lam,
              "reference_large_scale": REFERENCE_LARGE_SCALE,
              "strategies": {}}
    for strategy in strategies:
        settings = EvalSettings(horizon_seconds=horizon_seconds, strategy=strategy,
                                budget_video=budget_video, budget_action=budget_action,
                                lam=lam, seed=eval_seed, max_clips=max_clips)
        metrics = evaluate(net, stats, manifest_path, settings)
        profile = profile_memory_flops(net.cfg, strategy, horizon_chunks,
                                       budget_video, budget_action)
        report["strategies"][strategy] = {
            "metrics": metrics.to_dict(),
            "cached_floats_final": profile.cached_floats[-1],
            "attention_flops_final": profile.attention_flops[-1],
            "peak_cache_bytes": profile.peak_cache_bytes,
            "profile_steps": profile.to_records(),
        }
    if "full" in report["strategies"] and "selective" in report["strategies"]:
        full_cf = report["strategies"]["full"]["cached_floats_final"]
        sel_cf = report["strategies"]["selective"]["cached_floats_final"]
        report["cached_float_ratio_full_over_selective"] = full_cf / sel_cf
    return report


def write_profile_records(path, report: dict) -> None:
    """One JSON line per (strategy, step) profile record."""
    with open(path, "w") as fh:
        for strategy, body in report["strategies"].items():
            for rec in body["profile_steps"]:
                fh.write(json.dumps(rec) + "\n")
