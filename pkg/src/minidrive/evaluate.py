"""Grounded autoregressive evaluation.

Each clip is rolled out one chunk at a time: chunk j is predicted from the
real history (pools filled by encoding the real earlier chunks), scored
against ground truth, and then the real observation of chunk j replaces
the generated one in the pools before the next step.  Displacement errors
integrate the predicted 10 Hz increments from the real boundary pose;
horizons longer than one chunk chain consecutive grounded predictions.

With ``dream=True`` the pools keep the generated chunks instead and
guidance is derived from the decoded generated frames (qualitative mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import guidance as G
from .data import manifest_clip_paths, read_manifest, read_clip
from .metrics import MetricsReport, predicted_positions
from .model import ModelConfig
from .rng import ROLLOUT_ACTION, ROLLOUT_VIDEO, RngStream, stream_id
from .rollout import (InferenceNet, append_chunk, encode_observation,
                      generate_chunk, make_pools)
from .sim import STEPS_PER_CHUNK, Clip, compose_actions, ego_state_from_path
from .tokens import ActionStats, decode_video_chunk, encode_video_chunk, normalize_actions


@dataclass
class EvalSettings:
    horizon_seconds: float = 4.0
    strategy: str = "full"
    budget_video: int = 128
    budget_action: int = 32
    lam: float = 0.07
    seed: int = 0
    dream: bool = False
    max_clips: int | None = None
    scenario_filter: tuple | None = None


def _window_steps(horizon_seconds: float) -> tuple[int, int]:
    steps = int(round(horizon_seconds * 10))
    if steps < 1:
        raise ValueError("horizon must cover at least one action step")
    chunks = math.ceil(steps / STEPS_PER_CHUNK)
    return steps, chunks


def _clip_chunk_latents(clip: Clip, projector: np.ndarray) -> list[np.ndarray]:
    return [encode_video_chunk(clip.frames_chunk(k), projector) for k in range(clip.chunks)]


def _dream_guidance(cfg: ModelConfig, net: InferenceNet, gen, command: str,
                    step: int) -> G.GuidanceChunk:
    frames = decode_video_chunk(gen.latent, net["frozen.patch_projector"],
                                cfg.frames_per_chunk, cfg.raster_h, cfg.raster_w,
                                cfg.channels)
    return G.produce_guidance(frames[-1], gen.actions, command, step_index=step,
                              guidance_len=cfg.guidance_len)


def evaluate_clip(net: InferenceNet, stats: ActionStats, clip: Clip,
                  settings: EvalSettings, clip_index: int = 0) -> dict:
    """Per-chunk grounded predictions for one clip.

    Returns predicted increments per chunk plus the window errors.
    """
    cfg = net.cfg
    h_steps, h_chunks = _window_steps(settings.horizon_seconds)
    if h_chunks > clip.chunks - 1:
        raise ValueError(
            f"horizon of {h_chunks} chunks exceeds clip future length "
            f"({clip.chunks} chunks incl. context)")
    projector = net["frozen.patch_projector"]
    latents = _clip_chunk_latents(clip, projector)
    actions_norm = [normalize_actions(clip.actions_chunk(k), stats) for k in range(clip.chunks)]
    guidance_steps = G.guidance_steps_for_clip(clip, cfg.guidance_mode, cfg.guidance_len)
    pools = make_pools(cfg, settings.strategy, settings.budget_video,
                       settings.budget_action, settings.lam)

    predicted: dict[int, np.ndarray] = {}
    predicted_gens: dict[int, object] = {}
    retention: list = []
    dream_path = clip.poses[:STEPS_PER_CHUNK + 1].copy()
    for j in range(clip.chunks):
        gen = None
        if j >= 1:
            guid = guidance_steps[j]
            ego_vec = clip.ego_states[j]
            if settings.dream and (j - 1) in predicted_gens:
                guid = _dream_guidance(cfg, net, predicted_gens[j - 1],
                                       clip.route_commands[j], j)
                ego_vec = ego_state_from_path(dream_path, len(dream_path) - 1).as_array()
            rv = RngStream(settings.seed, stream_id(ROLLOUT_VIDEO, clip_index * 32 + j))
            ra = RngStream(settings.seed, stream_id(ROLLOUT_ACTION, clip_index * 32 + j))
            gen = generate_chunk(net, stats, pools, j, guid, ego_vec, rv, ra)
            predicted[j] = gen.actions
            predicted_gens[j] = gen
            if settings.dream:
                dream_path = np.concatenate(
                    [dream_path, compose_actions(tuple(dream_path[-1]), gen.actions)[1:]])
        if j == clip.chunks - 1:
            break
        if settings.dream and gen is not None:
            reports = append_chunk(pools, j, gen.cv_kvs, gen.ca_kvs,
                                   gen.video_queries, gen.action_queries)
        else:
            cv, ca, cv_q, ca_q = encode_observation(net, pools, j, latents[j],
                                                    actions_norm[j],
                                                    guidance_steps[j],
                                                    clip.ego_states[j])
            vq = gen.video_queries if gen is not None else cv_q
            aq = gen.action_queries if gen is not None else ca_q
            reports = append_chunk(pools, j, cv, ca, vq, aq)
        retention.extend(reports)

    windows = []
    for start in range(1, clip.chunks - h_chunks + 1):
        incr = np.concatenate([predicted[start + m] for m in range(h_chunks)], axis=0)
        boundary = clip.poses[start * STEPS_PER_CHUNK]
        pred_xy = predicted_positions(boundary, incr)[:h_steps]
        gt_xy = clip.poses[start * STEPS_PER_CHUNK + 1:
                           start * STEPS_PER_CHUNK + h_steps + 1, :2]
        windows.append(np.linalg.norm(pred_xy - gt_xy, axis=-1))
    return {"windows": windows, "predicted": predicted, "gens": predicted_gens,
            "retention": retention, "scenario": clip.scenario}


def _standstill_clip(clip: Clip, horizon_seconds: float) -> dict:
    h_steps, h_chunks = _window_steps(horizon_seconds)
    windows = []
    for start in range(1, clip.chunks - h_chunks + 1):
        b = clip.poses[start * STEPS_PER_CHUNK, :2]
        gt_xy = clip.poses[start * STEPS_PER_CHUNK + 1:
                           start * STEPS_PER_CHUNK + h_steps + 1, :2]
        windows.append(np.linalg.norm(gt_xy - b, axis=-1))
    return {"windows": windows, "scenario": clip.scenario}


def _aggregate(per_clip: list[dict], horizon_seconds: float) -> MetricsReport:
    def marks(err_rows, upto, final):
        vals_a, vals_f = [], []
        for row in err_rows:
            if len(row) >= final:
                vals_a.append(row[:upto].mean())
                vals_f.append(row[final - 1])
        return vals_a, vals_f

    clip_stats = []
    for rec in per_clip:
        rows = rec["windows"]
        a3, f3 = marks(rows, 30, 30)
        a4, f4 = marks(rows, 40, 40)
        ah = [r.mean() for r in rows]
        fh = [r[-1] for r in rows]
        clip_stats.append({
            "scenario": rec["scenario"],
            "ade_3s": np.mean(a3) if a3 else np.nan,
            "fde_3s": np.mean(f3) if f3 else np.nan,
            "ade_4s": np.mean(a4) if a4 else np.nan,
            "fde_4s": np.mean(f4) if f4 else np.nan,
            "ade_h": np.mean(ah), "fde_h": np.mean(fh),
        })
    per_scenario: dict[str, dict] = {}
    for st in clip_stats:
        bucket = per_scenario.setdefault(st["scenario"], {"ade_4s": [], "fde_4s": []})
        bucket["ade_4s"].append(st["ade_4s"])
        bucket["fde_4s"].append(st["fde_4s"])
    per_scenario = {
        name: {"ade_4s": float(np.nanmean(v["ade_4s"])),
               "fde_4s": float(np.nanmean(v["fde_4s"])),
               "count": len(v["ade_4s"])}
        for name, v in per_scenario.items()
    }

    def agg(key):
        vals = [st[key] for st in clip_stats if not np.isnan(st[key])]
        return float(np.mean(vals)) if vals else 0.0

    return MetricsReport(ade_3s=agg("ade_3s"), ade_4s=agg("ade_4s"),
                         fde_3s=agg("fde_3s"), fde_4s=agg("fde_4s"),
                         per_scenario=per_scenario, clip_count=len(clip_stats),
                         horizon_seconds=horizon_seconds,
                         ade_horizon=agg("ade_h"), fde_horizon=agg("fde_h"))


def _manifest_clips(manifest_path, settings: EvalSettings):
    payload = read_manifest(manifest_path)
    paths = manifest_clip_paths(manifest_path)
    picked = []
    for idx, (entry, path) in enumerate(zip(payload["clips"], paths)):
        if settings.scenario_filter and entry["scenario"] not in settings.scenario_filter:
            continue
        picked.append((idx, path))
        if settings.max_clips is not None and len(picked) >= settings.max_clips:
            break
    return picked


def evaluate(net: InferenceNet, stats: ActionStats, manifest_path,
             settings: EvalSettings | None = None) -> MetricsReport:
    """Roll out every manifest clip under the given memory strategy."""
    settings = settings or EvalSettings()
    per_clip = []
    for idx, path in _manifest_clips(manifest_path, settings):
        clip = read_clip(path)
        per_clip.append(evaluate_clip(net, stats, clip, settings, clip_index=idx))
    return _aggregate(per_clip, settings.horizon_seconds)


def standstill_metrics(manifest_path, settings: EvalSettings | None = None) -> MetricsReport:
    """Zero-action baseline under the same windowing."""
    settings = settings or EvalSettings()
    per_clip = []
    for _, path in _manifest_clips(manifest_path, settings):
        clip = read_clip(path)
        per_clip.append(_standstill_clip(clip, settings.horizon_seconds))
    return _aggregate(per_clip, settings.horizon_seconds)


def dream_rollout(net: InferenceNet, stats: ActionStats, clip: Clip,
                  settings: EvalSettings | None = None, clip_index: int = 0) -> dict:
    settings = settings or EvalSettings(dream=True)
    return evaluate_clip(net, stats, clip, settings, clip_index=clip_index)
