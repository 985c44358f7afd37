"""Miniature diffusion transformer shared by the video and action streams.

Each block applies, in order: flow-time-modulated norm + masked
self-attention over the unified sequence, block-diagonal guidance
cross-attention, block-diagonal ego cross-attention, and a
flow-time-modulated MLP.  Clean context rows run at flow time 0; noisy
rows carry their chunk's sampled flow time.  Velocity heads are zero
initialized so an untrained model predicts exactly zero velocity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .layout import (SequenceLayout, build_ego_mask, build_guidance_mask,
                     build_sequence_layout, build_teacher_forcing_mask)
from .rng import MODEL_INIT, RngStream, stream_id
from .tensor import PreparedMask, Tensor
from .tokens import decode_action_velocity, encode_actions, make_projector


@dataclass
class ModelConfig:
    d: int = 64
    layers: int = 4
    heads: int = 4
    d_z: int = 48
    n_video: int = 64
    n_action: int = 10
    k_max: int = 16
    group_size: int = 4
    guidance_vocab: int = 10
    guidance_len: int = 3
    beta_a: float = 1.0
    beta_video: float = 1.0
    mlp_ratio: int = 4
    action_hidden: int = 128
    ego_hidden: int = 64
    patch: int = 8
    raster_h: int = 32
    raster_w: int = 32
    channels: int = 3
    frames_per_chunk: int = 4
    steps_per_chunk: int = 40
    chunk_seconds: float = 4.0
    projector_seed: int = 1234
    guidance_mode: str = "scene"

    def __post_init__(self):
        counts = (self.d, self.layers, self.heads, self.d_z, self.n_video,
                  self.n_action, self.k_max, self.group_size, self.guidance_vocab,
                  self.guidance_len, self.mlp_ratio, self.action_hidden, self.ego_hidden)
        if any(c <= 0 for c in counts):
            raise ValueError("all model counts must be positive")
        if self.d % self.heads:
            raise ValueError(f"hidden width {self.d} not divisible by {self.heads} heads")
        grid = (self.raster_h // self.patch) * (self.raster_w // self.patch)
        if self.n_video != self.frames_per_chunk * grid:
            raise ValueError("n_video must equal frames_per_chunk x patch grid")
        if self.n_action * self.group_size != self.steps_per_chunk:
            raise ValueError("n_action x group_size must equal steps_per_chunk")
        if self.beta_a < 0 or self.beta_video < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def tau_features(tau: np.ndarray, d: int) -> np.ndarray:
    """Sinusoidal features of flow time, [..., d]."""
    tau = np.asarray(tau, dtype=np.float64)
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = tau[..., None] * freqs * 1000.0
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)


_ZERO_INIT_PREFIXES = ("head.video", "da.w2", "da.b2")


def init_model(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic parameter tables keyed by dotted names.

    Projections use scaled-normal init (std 1/sqrt(fan_in)); embedding
    tables use std 0.02; velocity-head outputs, the action-decoder output
    layer, and all modulation maps start at zero; the frozen patch
    projector rides along as a non-trainable entry.
    """
    rng = RngStream(seed, stream_id(MODEL_INIT))
    d, dz = config.d, config.d_z
    params: dict[str, Tensor] = {}

    def w(name, fan_in, fan_out, zero=False, table=False):
        if zero:
            data = np.zeros((fan_in, fan_out))
        else:
            scale = 0.02 if table else 1.0 / math.sqrt(fan_in)
            data = rng.normal(fan_in * fan_out).reshape(fan_in, fan_out) * scale
        params[name] = Tensor(data, requires_grad=True)

    def b(name, n, zero=True):
        params[name] = Tensor(np.zeros(n), requires_grad=True)

    def ln(name):
        params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)

    w("embed.latent_w", dz, d); b("embed.latent_b", d)
    w("embed.role", 4, d, table=True)
    w("embed.chunk", config.k_max, d, table=True)
    w("embed.pos", max(config.n_video, config.n_action), d, table=True)
    w("embed.guidance_table", config.guidance_vocab, d, table=True)
    w("embed.guidance_pos", config.guidance_len, d, table=True)
    w("ego.w1", 3, config.ego_hidden); b("ego.b1", config.ego_hidden)
    w("ego.w2", config.ego_hidden, d); b("ego.b2", d)
    w("tmap.w1", d, d); b("tmap.b1", d)
    w("tmap.w2", d, d); b("tmap.b2", d)
    gin = config.group_size * 3
    w("ea.w1", gin, config.action_hidden); b("ea.b1", config.action_hidden)
    w("ea.w2", config.action_hidden, d); b("ea.b2", d)
    w("da.w1", d, config.action_hidden); b("da.b1", config.action_hidden)
    w("da.w2", config.action_hidden, gin, zero=True); b("da.b2", gin)
    w("head.video_w", d, dz, zero=True); b("head.video_b", dz)
    ln("final_ln")

    for i in range(config.layers):
        p = f"layers.{i}"
        for branch in ("sa", "xg", "xe"):
            for proj in ("q", "k", "v", "o"):
                w(f"{p}.{branch}.w{proj}", d, d)
                b(f"{p}.{branch}.b{proj}", d)
        ln(f"{p}.ln_g")
        ln(f"{p}.ln_e")
        w(f"{p}.mlp.w1", d, config.mlp_ratio * d); b(f"{p}.mlp.b1", config.mlp_ratio * d)
        w(f"{p}.mlp.w2", config.mlp_ratio * d, d); b(f"{p}.mlp.b2", d)
        for mod in ("shift_sa", "scale_sa", "gate_sa", "shift_mlp", "scale_mlp", "gate_mlp"):
            w(f"{p}.mod.{mod}.w", d, d, zero=True)
            b(f"{p}.mod.{mod}.b", d)

    projector = make_projector(dz, config.patch_dim, config.projector_seed)
    params["frozen.patch_projector"] = Tensor(projector, requires_grad=False)
    return params


def trainable(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if v.requires_grad}


@dataclass
class MaskSet:
    """Layout plus every prepared mask and index table for one window size."""

    layout: SequenceLayout
    self_mask: PreparedMask
    guidance_mask: PreparedMask
    ego_mask: PreparedMask
    row_group: np.ndarray
    block_role_idx: np.ndarray
    block_pos_idx: np.ndarray
    guidance_pos_idx: np.ndarray


def build_masks(config: ModelConfig, chunks: int) -> MaskSet:
    layout = build_sequence_layout(chunks, config.n_video, config.n_action,
                                   config.guidance_len, ego_len=1)
    nx, na = config.n_video, config.n_action
    role_idx = np.array([0] * nx + [1] * na + [2] * nx + [3] * na)
    pos_idx = np.concatenate([np.arange(nx), np.arange(na), np.arange(nx), np.arange(na)])
    row_group = np.concatenate([
        np.concatenate([np.zeros(nx + na, dtype=np.int64),
                        np.full(nx + na, k + 1, dtype=np.int64)])
        for k in range(chunks)
    ])
    return MaskSet(layout=layout,
                   self_mask=build_teacher_forcing_mask(layout).prepared(),
                   guidance_mask=build_guidance_mask(layout).prepared(),
                   ego_mask=build_ego_mask(layout).prepared(),
                   row_group=row_group,
                   block_role_idx=role_idx,
                   block_pos_idx=pos_idx,
                   guidance_pos_idx=np.tile(np.arange(config.guidance_len), chunks))


@dataclass
class ForwardInputs:
    """One training batch over a K-chunk window (leading batch axis)."""

    clean_latents: np.ndarray      # [B, K, N_x, d_z] (history-augmented)
    noisy_latents: np.ndarray      # [B, K, N_x, d_z]
    clean_actions: np.ndarray      # [B, K, steps, 3] normalized
    noisy_actions: np.ndarray      # [B, K, steps, 3] normalized
    tau: np.ndarray                # [B, K]
    guidance_ids: np.ndarray       # [B, K, guidance_len]
    ego: np.ndarray                # [B, K, 3]
    chunk_indices: np.ndarray      # [B, K] absolute chunk positions


def _heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _cross_attention(p, params, prefix, x, mem, mask, heads):
    q = _heads(T.linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), heads)
    k = _heads(T.linear(mem, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), heads)
    v = _heads(T.linear(mem, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), heads)
    att = _merge(T.masked_attention(q, k, v, mask))
    return T.linear(att, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def forward(params: dict[str, Tensor], config: ModelConfig, masks: MaskSet,
            inputs: ForwardInputs):
    """Full-clip teacher-forced pass.

    Returns (video velocities [B, K, N_x, d_z], action velocities
    [B, K, steps, 3]) as graph tensors.
    """
    lay = masks.layout
    bsz, kw = inputs.tau.shape
    nx, na, d = config.n_video, config.n_action, config.d
    if kw != lay.chunks:
        raise ValueError(f"inputs cover {kw} chunks but masks were built for {lay.chunks}")
    if inputs.chunk_indices.max() >= config.k_max:
        raise ValueError("chunk index beyond the positional table; raise k_max")

    cv = T.linear(T.tensor(inputs.clean_latents), params["embed.latent_w"], params["embed.latent_b"])
    nv = T.linear(T.tensor(inputs.noisy_latents), params["embed.latent_w"], params["embed.latent_b"])
    ca = encode_actions(inputs.clean_actions, params["ea.w1"], params["ea.b1"],
                        params["ea.w2"], params["ea.b2"], config.group_size)
    nna = encode_actions(inputs.noisy_actions, params["ea.w1"], params["ea.b1"],
                         params["ea.w2"], params["ea.b2"], config.group_size)

    static = T.add(T.take_rows(params["embed.role"], masks.block_role_idx),
                   T.take_rows(params["embed.pos"], masks.block_pos_idx))
    chunk_emb = T.reshape(T.gather(params["embed.chunk"], inputs.chunk_indices),
                          (bsz, kw, 1, d))
    seq = T.concat_rows([cv, ca, nv, nna], axis=-2)            # [B, K, block, d]
    seq = T.add(T.add(seq, static), chunk_emb)
    seq = T.reshape(seq, (bsz, lay.length, d))

    # flow-time embedding per (clean, noisy-chunk) group
    tau_groups = np.concatenate([np.zeros((bsz, 1)), inputs.tau], axis=1)
    t_base = T.tensor(tau_features(tau_groups, d))
    t_emb = T.linear(T.silu(T.linear(t_base, params["tmap.w1"], params["tmap.b1"])),
                     params["tmap.w2"], params["tmap.b2"])      # [B, K+1, d]

    g_ids = inputs.guidance_ids.reshape(bsz, kw * config.guidance_len)
    g_emb = T.add(T.gather(params["embed.guidance_table"], g_ids),
                  T.take_rows(params["embed.guidance_pos"], masks.guidance_pos_idx))
    e_emb = T.linear(T.silu(T.linear(T.tensor(inputs.ego), params["ego.w1"], params["ego.b1"])),
                     params["ego.w2"], params["ego.b2"])        # [B, K, d]

    for i in range(config.layers):
        p = f"layers.{i}"

        def mod(name):
            vec = T.linear(t_emb, params[f"{p}.mod.{name}.w"], params[f"{p}.mod.{name}.b"])
            return T.take_rows(vec, masks.row_group)            # [B, L, d]

        x = T.layer_norm(seq)
        x = T.add(T.mul(x, T.add(mod("scale_sa"), 1.0)), mod("shift_sa"))
        q = _heads(T.linear(x, params[f"{p}.sa.wq"], params[f"{p}.sa.bq"]), config.heads)
        k = _heads(T.linear(x, params[f"{p}.sa.wk"], params[f"{p}.sa.bk"]), config.heads)
        v = _heads(T.linear(x, params[f"{p}.sa.wv"], params[f"{p}.sa.bv"]), config.heads)
        att = _merge(T.masked_attention(q, k, v, masks.self_mask))
        att = T.linear(att, params[f"{p}.sa.wo"], params[f"{p}.sa.bo"])
        seq = T.add(seq, T.mul(mod("gate_sa"), att))

        xg = T.affine_layer_norm(seq, params[f"{p}.ln_g.g"], params[f"{p}.ln_g.b"])
        seq = T.add(seq, _cross_attention(p, params, f"{p}.xg", xg, g_emb,
                                          masks.guidance_mask, config.heads))
        xe = T.affine_layer_norm(seq, params[f"{p}.ln_e.g"], params[f"{p}.ln_e.b"])
        seq = T.add(seq, _cross_attention(p, params, f"{p}.xe", xe, e_emb,
                                          masks.ego_mask, config.heads))

        y = T.layer_norm(seq)
        y = T.add(T.mul(y, T.add(mod("scale_mlp"), 1.0)), mod("shift_mlp"))
        h = T.linear(T.silu(T.linear(y, params[f"{p}.mlp.w1"], params[f"{p}.mlp.b1"])),
                     params[f"{p}.mlp.w2"], params[f"{p}.mlp.b2"])
        seq = T.add(seq, T.mul(mod("gate_mlp"), h))

    hf = T.affine_layer_norm(seq, params["final_ln.g"], params["final_ln.b"])
    hf = T.reshape(hf, (bsz, kw, lay.block, d))
    nv_rows = T.slice_rows(hf, nx + na, 2 * nx + na, axis=-2)
    na_rows = T.slice_rows(hf, 2 * nx + na, lay.block, axis=-2)
    v_video = T.linear(nv_rows, params["head.video_w"], params["head.video_b"])
    v_action = decode_action_velocity(na_rows, params["da.w1"], params["da.b1"],
                                      params["da.w2"], params["da.b2"], config.group_size)
    return v_video, v_action
