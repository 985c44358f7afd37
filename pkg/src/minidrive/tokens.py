"""Clip-to-token maps: frozen patch projection for video, grouped MLP
encoding for actions, and action normalization.

The video projector is a random orthonormal matrix drawn once from its own
seed and never trained; it plays the role of a frozen pretrained encoder,
keeping the latent space fixed across every ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import PROJECTOR, RngStream, stream_id


def make_projector(d_z: int, patch_dim: int, seed: int) -> np.ndarray:
    """Random [d_z, patch_dim] matrix with orthonormal rows."""
    if d_z > patch_dim:
        raise ValueError("latent width cannot exceed the patch dimension")
    rng = RngStream(seed, stream_id(PROJECTOR))
    g = rng.normal(patch_dim * d_z).reshape(patch_dim, d_z)
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # deterministic sign convention
    return q.T.copy()


def patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    """[F, H, W, C] -> [F * (H/p) * (W/p), p*p*C], frame-major then row-major."""
    frames = np.asarray(frames, dtype=np.float64)
    f, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ValueError(f"raster {h}x{w} not divisible by patch {patch}")
    x = frames.reshape(f, h // patch, patch, w // patch, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(f * (h // patch) * (w // patch), patch * patch * c)


def unpatchify(tokens: np.ndarray, patch: int, frames: int, height: int,
               width: int, channels: int) -> np.ndarray:
    gh, gw = height // patch, width // patch
    x = tokens.reshape(frames, gh, gw, patch, patch, channels)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(frames, height, width, channels)


def encode_video_chunk(frames: np.ndarray, projector: np.ndarray) -> np.ndarray:
    """Project non-overlapping patches to the frozen latent space."""
    d_z, patch_dim = projector.shape
    patch = _patch_size(patch_dim, frames.shape[-1])
    patches = patchify(frames, patch)
    if patches.shape[1] != patch_dim:
        raise ValueError(f"patch dim {patches.shape[1]} != projector dim {patch_dim}")
    return patches @ projector.T


def decode_video_chunk(latents: np.ndarray, projector: np.ndarray,
                       frames: int, height: int, width: int, channels: int,
                       clamp: bool = True) -> np.ndarray:
    """Transpose-projection and patch reassembly (visualization inverse)."""
    d_z, patch_dim = projector.shape
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[-1] != d_z:
        raise ValueError(f"latent width {latents.shape[-1]} != projector rows {d_z}")
    patches = latents @ projector
    out = unpatchify(patches, _patch_size(patch_dim, channels), frames, height, width, channels)
    return np.clip(out, 0.0, 1.0) if clamp else out


def _patch_size(patch_dim: int, channels: int) -> int:
    patch = round((patch_dim / channels) ** 0.5)
    if patch * patch * channels != patch_dim:
        raise ValueError(f"patch dimension {patch_dim} is not square x {channels} channels")
    return patch


@dataclass
class ActionStats:
    """Per-dimension mean/std of raw increments over the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(3)
        if not (self.std > 0).all():
            raise ValueError("action stds must be strictly positive")


def compute_action_stats(action_arrays) -> ActionStats:
    stacked = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, 3)
                              for a in action_arrays], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return ActionStats(mean=mean, std=np.maximum(std, 1e-12))


def normalize_actions(a: np.ndarray, stats: ActionStats) -> np.ndarray:
    return (np.asarray(a, dtype=np.float64) - stats.mean) / stats.std


def denormalize_actions(a: np.ndarray, stats: ActionStats) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * stats.std + stats.mean


def group_steps(a: np.ndarray, group_size: int) -> np.ndarray:
    """[..., steps, 3] -> [..., steps/group, group*3] in temporal order."""
    a = np.asarray(a, dtype=np.float64)
    steps = a.shape[-2]
    if steps % group_size:
        raise ValueError(f"{steps} steps not divisible by group size {group_size}")
    return a.reshape(*a.shape[:-2], steps // group_size, group_size * 3)


def encode_actions(a_norm, w1, b1, w2, b2, group_size: int):
    """Apply the 2-layer MLP action encoder to grouped normalized steps.

    a_norm: [..., steps, 3] Tensor or array; returns [..., steps/group, d].
    """
    x = a_norm if isinstance(a_norm, T.Tensor) else T.tensor(a_norm)
    steps = x.shape[-2]
    if steps % group_size:
        raise ValueError(f"{steps} steps not divisible by group size {group_size}")
    grouped = T.reshape(x, (*x.shape[:-2], steps // group_size, group_size * 3))
    return T.linear(T.silu(T.linear(grouped, w1, b1)), w2, b2)


def decode_action_velocity(head_states, w1, b1, w2, b2, group_size: int):
    """Map action-token hidden states back to per-step velocities.

    head_states: [..., n_tokens, d]; returns [..., n_tokens*group, 3]
    reassembled in temporal order.
    """
    h = head_states if isinstance(head_states, T.Tensor) else T.tensor(head_states)
    out = T.linear(T.silu(T.linear(h, w1, b1)), w2, b2)
    n_tokens = out.shape[-2]
    return T.reshape(out, (*out.shape[:-2], n_tokens * group_size, 3))
