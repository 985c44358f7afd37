"""Rule-based scene-evolving guidance.

A deterministic provider maps the latest causally available context (the
boundary raster entering a chunk, the previous chunk's actions, and the
upcoming route command) to a short symbolic token sequence.  A constant
variant stands in for clip-level "global prompt" conditioning in the
guidance ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .sim import AGENT_CH, DT, STEPS_PER_CHUNK, Clip

VOCAB = ("PAD", "PROCEED", "YIELD", "STOP", "TURN_LEFT", "TURN_RIGHT",
         "KEEP_LANE", "FOLLOW", "CLEAR_ROAD", "OBSTACLE_AHEAD")
TOKEN_IDS = {name: i for i, name in enumerate(VOCAB)}
GUIDANCE_LEN = 3

OBSTACLE_OCCUPANCY_THRESHOLD = 0.02   # mean agent coverage, forward half-plane
STOPPED_SPEED = 0.3                   # m/s

_COMMAND_TOKEN = {"straight": "KEEP_LANE", "left": "TURN_LEFT", "right": "TURN_RIGHT"}

GUIDANCE_MODE_SCENE = "scene"
GUIDANCE_MODE_FIXED = "fixed"


@dataclass(frozen=True)
class GuidanceChunk:
    step_index: int
    token_ids: tuple

    def __post_init__(self):
        if any(not 0 <= i < len(VOCAB) for i in self.token_ids):
            raise ValueError(f"guidance ids out of vocabulary: {self.token_ids}")

    @property
    def tokens(self) -> tuple:
        return tuple(VOCAB[i] for i in self.token_ids)


def _pad(ids: list[int], guidance_len: int) -> tuple:
    if len(ids) > guidance_len:
        raise ValueError("guidance longer than its span")
    return tuple(ids + [TOKEN_IDS["PAD"]] * (guidance_len - len(ids)))


def produce_guidance(frame_summary: np.ndarray, recent_actions: np.ndarray,
                     command: str, step_index: int = 0,
                     guidance_len: int = GUIDANCE_LEN) -> GuidanceChunk:
    """Deterministic rule table over causally available context.

    frame_summary: the boundary raster entering the chunk (its agent
    channel supplies the occupancy statistic); recent_actions: the previous
    chunk's 10 Hz increments; command: the route command for the upcoming
    horizon.
    """
    if command not in _COMMAND_TOKEN:
        raise ValueError(f"unknown route command {command!r}")
    forward = np.asarray(frame_summary, dtype=np.float64)[: frame_summary.shape[0] // 2, :, AGENT_CH]
    obstacle = bool(forward.mean() > OBSTACLE_OCCUPANCY_THRESHOLD)
    steps = np.asarray(recent_actions, dtype=np.float64).reshape(-1, 3)
    mean_speed = float(np.hypot(steps[:, 0], steps[:, 1]).mean() / DT)

    first = _COMMAND_TOKEN[command]
    second = "OBSTACLE_AHEAD" if obstacle else "CLEAR_ROAD"
    if mean_speed < STOPPED_SPEED:
        third = "STOP"
    elif obstacle:
        third = "YIELD"
    else:
        third = "PROCEED"
    ids = [TOKEN_IDS[first], TOKEN_IDS[second], TOKEN_IDS[third]]
    return GuidanceChunk(step_index=step_index, token_ids=_pad(ids, guidance_len))


def fixed_guidance(step_index: int = 0, guidance_len: int = GUIDANCE_LEN) -> GuidanceChunk:
    """The constant global-prompt baseline, identical at every step."""
    ids = [TOKEN_IDS["KEEP_LANE"], TOKEN_IDS["CLEAR_ROAD"], TOKEN_IDS["PROCEED"]]
    return GuidanceChunk(step_index=step_index, token_ids=_pad(ids, guidance_len))


def _prior_actions(clip: Clip, step: int) -> np.ndarray:
    """Recent ego motion entering chunk `step` (synthesized from the initial
    speed when no earlier chunk exists — the car was already driving)."""
    if step > 0:
        return clip.actions_chunk(step - 1)
    v0 = float(clip.ego_states[0][0])
    out = np.zeros((STEPS_PER_CHUNK, 3))
    out[:, 0] = v0 * DT
    return out


def guidance_steps_for_clip(clip: Clip, mode: str = GUIDANCE_MODE_SCENE,
                            guidance_len: int = GUIDANCE_LEN) -> list[GuidanceChunk]:
    """One guidance chunk per decision step, step s conditioning chunk s."""
    if mode == GUIDANCE_MODE_FIXED:
        return [fixed_guidance(s, guidance_len) for s in range(clip.chunks)]
    if mode != GUIDANCE_MODE_SCENE:
        raise ValueError(f"unknown guidance mode {mode!r}")
    steps = []
    for s in range(clip.chunks):
        steps.append(produce_guidance(
            frame_summary=clip.boundary_frame(s),
            recent_actions=_prior_actions(clip, s),
            command=clip.route_commands[s],
            step_index=s,
            guidance_len=guidance_len,
        ))
    return steps


def embed_guidance(chunk: GuidanceChunk, table, pos):
    """Embedding-table lookup plus position offset: [guidance_len, d]."""
    ids = np.asarray(chunk.token_ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise IndexError(f"guidance id out of vocabulary range: {ids}")
    return T.add(T.gather(table, ids), pos)


def save_guidance_cache(path, steps: list[GuidanceChunk]) -> None:
    payload = {"steps": [{"step": s.step_index, "ids": list(s.token_ids),
                          "tokens": list(s.tokens)} for s in steps]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=0)


def load_guidance_cache(path) -> list[GuidanceChunk]:
    with open(path) as fh:
        payload = json.load(fh)
    return [GuidanceChunk(step_index=rec["step"], token_ids=tuple(rec["ids"]))
            for rec in payload["steps"]]
