"""Chunkwise autoregressive inference with bounded KV memory.

Generation runs in plain float64 numpy (no tape): per chunk, the video
flow is Euler-integrated 3 steps from tau 1.0 to 0.6 attending to the
memory pools, the partially denoised latent becomes the conditioning
context for the 10-step action flow (tau 1 -> 0), and the chunk's clean
keys/values are then computed and appended to the pools under the chosen
retention strategy.

Pools are per-modality and per-layer but share one tag set; retention
scores aggregate attention mass and key redundancy over layers and heads
into one scalar per tag, so every layer keeps the same tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .guidance import GuidanceChunk
from .layout import Role
from .model import ModelConfig, tau_features
from .tensor import np_attention, np_layernorm, np_linear, np_masked_softmax, np_silu
from .tokens import ActionStats, denormalize_actions, group_steps

VIDEO_STEPS = 3
VIDEO_TAU_FROM, VIDEO_TAU_TO = 1.0, 0.6
ACTION_STEPS = 10
ACTION_TAU_FROM, ACTION_TAU_TO = 1.0, 0.0

STRATEGY_FULL = "full"
STRATEGY_FIFO = "fifo"
STRATEGY_SELECTIVE = "selective"
STRATEGIES = (STRATEGY_FULL, STRATEGY_FIFO, STRATEGY_SELECTIVE)


class FlowIntegrationError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite velocity at integration step {step}")


class PoolError(ValueError):
    pass


def euler_integrate(velocity_field, x_init: np.ndarray, tau_from: float,
                    tau_to: float, steps: int) -> np.ndarray:
    """Fixed-step explicit Euler over a uniform descending tau grid."""
    if steps < 1:
        raise ValueError("need at least one integration step")
    if not (0.0 <= tau_to < tau_from <= 1.0):
        raise ValueError("require 0 <= tau_to < tau_from <= 1")
    taus = np.linspace(tau_from, tau_to, steps + 1)
    x = np.asarray(x_init, dtype=np.float64)
    for i in range(steps):
        v = np.asarray(velocity_field(x, float(taus[i])), dtype=np.float64)
        if not np.isfinite(v).all():
            raise FlowIntegrationError(i)
        x = x + (taus[i + 1] - taus[i]) * v
    return x


# ---------------------------------------------------------------------------
# retention scoring


def relevance_scores(queries: list[np.ndarray], keys: list[np.ndarray]) -> np.ndarray:
    """Average attention mass per cached token (Sum over tokens = 1).

    queries/keys: one [n, heads, dh] / [T, heads, dh] array per layer; the
    per-layer, per-head softmax over pooled keys is averaged over queries,
    heads, and layers into one scalar per tag.
    """
    if not keys or keys[0].shape[0] == 0:
        raise PoolError("relevance undefined for an empty pool")
    per_layer = []
    for q, k in zip(queries, keys):
        dh = q.shape[-1]
        logits = np.einsum("nhd,thd->hnt", q, k) / math.sqrt(dh)
        w = np_masked_softmax(logits, None, inplace=True)
        per_layer.append(w.mean(axis=(0, 1)))
    return np.mean(per_layer, axis=0)


def redundancy_scores(keys: list[np.ndarray]) -> np.ndarray:
    """Mean cosine similarity of each cached key to the other cached keys,
    averaged over heads and layers.  Pools of size one (and all-zero keys)
    score zero by convention.
    """
    t = keys[0].shape[0]
    if t == 0:
        return np.zeros(0)
    if t == 1:
        return np.zeros(1)
    per_layer = []
    for k in keys:
        norms = np.linalg.norm(k, axis=-1, keepdims=True)
        unit = np.divide(k, norms, out=np.zeros_like(k), where=norms > 0)
        cos = np.einsum("thd,uhd->htu", unit, unit)
        eta = (cos.sum(axis=-1) - np.einsum("htt->ht", cos)) / (t - 1)
        per_layer.append(eta.mean(axis=0))
    return np.mean(per_layer, axis=0)


@dataclass
class RetentionReport:
    strategy: str
    modality: str
    relevance: dict
    redundancy: dict
    scores: dict
    evicted: list
    retained: list

    def __post_init__(self):
        if self.relevance:
            total = sum(self.relevance.values())
            if abs(total - 1.0) > 1e-9:
                raise PoolError(f"relevance mass {total} != 1")
            for tag, eta in self.redundancy.items():
                if not -1.0 - 1e-9 <= eta <= 1.0 + 1e-9:
                    raise PoolError(f"redundancy {eta} outside [-1, 1] for {tag}")

    def to_record(self) -> dict:
        return {"strategy": self.strategy, "modality": self.modality,
                "evicted": [list(t) for t in self.evicted],
                "retained": [list(t) for t in self.retained],
                "scores": {str(k): v for k, v in self.scores.items()}}


class KVPool:
    """Bounded per-modality cache of per-layer keys/values with shared tags."""

    def __init__(self, modality: str, layers: int, budget: int,
                 strategy: str = STRATEGY_FULL, lam: float = 0.07):
        if strategy not in STRATEGIES:
            raise PoolError(f"unknown strategy {strategy!r}")
        if not 0.0 <= lam <= 1.0:
            raise PoolError("lambda must lie in [0, 1]")
        if strategy != STRATEGY_FULL and budget < 1:
            raise PoolError("bounded strategies need a positive budget")
        self.modality = modality
        self.layers = layers
        self.budget = budget
        self.strategy = strategy
        self.lam = lam
        self.keys: list[np.ndarray | None] = [None] * layers
        self.values: list[np.ndarray | None] = [None] * layers
        self.tags: list[tuple] = []

    def __len__(self) -> int:
        return len(self.tags)

    def layer_keys(self) -> list[np.ndarray]:
        return [k for k in self.keys if k is not None]

    def _append(self, new_k, new_v, new_tags) -> None:
        if set(new_tags) & set(self.tags):
            raise PoolError("duplicate tags appended to pool")
        for i in range(self.layers):
            if self.keys[i] is None:
                self.keys[i] = new_k[i].copy()
                self.values[i] = new_v[i].copy()
            else:
                self.keys[i] = np.concatenate([self.keys[i], new_k[i]], axis=0)
                self.values[i] = np.concatenate([self.values[i], new_v[i]], axis=0)
        self.tags.extend(new_tags)

    def _select(self, order_keep: list[int]) -> None:
        idx = np.array(sorted(order_keep, key=lambda i: self.tags[i][:2]), dtype=np.int64)
        for i in range(self.layers):
            self.keys[i] = self.keys[i][idx]
            self.values[i] = self.values[i][idx]
        self.tags = [self.tags[i] for i in idx]

    def update(self, new_k, new_v, new_tags, queries=None) -> RetentionReport:
        """Evict per strategy, then append the new chunk's KVs unconditionally."""
        n_new = len(new_tags)
        if self.strategy != STRATEGY_FULL and n_new > self.budget:
            raise PoolError(
                f"{self.modality} budget {self.budget} cannot hold one chunk of {n_new} tokens")
        relevance, redundancy, scores = {}, {}, {}
        evicted: list[tuple] = []
        if self.strategy == STRATEGY_SELECTIVE and self.tags:
            keep_n = self.budget - n_new
            rho = relevance_scores(queries, self.layer_keys()) if queries is not None else None
            if rho is None:
                raise PoolError("selective eviction needs current queries")
            eta = redundancy_scores(self.layer_keys())
            s = self.lam * rho - (1.0 - self.lam) * eta
            relevance = dict(zip(self.tags, rho.tolist()))
            redundancy = dict(zip(self.tags, eta.tolist()))
            scores = dict(zip(self.tags, s.tolist()))
            # rank: score desc, then newer chunk, then lower token index
            order = sorted(range(len(self.tags)),
                           key=lambda i: (-s[i], -self.tags[i][0], self.tags[i][1]))
            keep = order[:max(keep_n, 0)]
            evicted = [self.tags[i] for i in order[max(keep_n, 0):]]
            self._select(keep)
        elif self.strategy == STRATEGY_FIFO:
            overflow = len(self.tags) + n_new - self.budget
            if overflow > 0:
                order = sorted(range(len(self.tags)), key=lambda i: self.tags[i][:2])
                evicted = [self.tags[i] for i in order[:overflow]]
                self._select(order[overflow:])
        self._append(new_k, new_v, new_tags)
        if self.strategy != STRATEGY_FULL and len(self.tags) > self.budget:
            raise PoolError("pool exceeded its budget after update")
        return RetentionReport(strategy=self.strategy, modality=self.modality,
                               relevance=relevance, redundancy=redundancy,
                               scores=scores, evicted=evicted,
                               retained=list(self.tags))

    def replace_chunk(self, chunk_index: int, new_k, new_v) -> None:
        """Swap the stored K/V of one chunk's tags (same tag set) in place."""
        rows = [i for i, t in enumerate(self.tags) if t[0] == chunk_index]
        if len(rows) != new_k[0].shape[0]:
            raise PoolError(
                f"chunk {chunk_index} holds {len(rows)} tags, got {new_k[0].shape[0]} rows")
        idx = np.array(rows, dtype=np.int64)
        for i in range(self.layers):
            self.keys[i][idx] = new_k[i]
            self.values[i][idx] = new_v[i]


def make_pools(config: ModelConfig, strategy: str, budget_video: int = 128,
               budget_action: int = 32, lam: float = 0.07) -> dict:
    return {
        "video": KVPool("video", config.layers, budget_video, strategy, lam),
        "action": KVPool("action", config.layers, budget_action, strategy, lam),
    }


# ---------------------------------------------------------------------------
# incremental transformer passes


class InferenceNet:
    """Read-only ndarray view of the trained parameters."""

    def __init__(self, params: dict, config: ModelConfig):
        self.p = {k: (v.data if hasattr(v, "data") else np.asarray(v)) for k, v in params.items()}
        self.cfg = config

    def __getitem__(self, name: str) -> np.ndarray:
        return self.p[name]


def _tau_embedding(net: InferenceNet, tau: float) -> np.ndarray:
    base = tau_features(np.array(tau), net.cfg.d)
    h = np_silu(np_linear(base, net["tmap.w1"], net["tmap.b1"]))
    return np_linear(h, net["tmap.w2"], net["tmap.b2"])


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads)


def _ctx_attention(q, k, v):
    # q: [n, h, dh], k/v: [T, h, dh] -> [n, h*dh]
    dh = q.shape[-1]
    logits = np.einsum("nhd,thd->hnt", q, k) / math.sqrt(dh)
    w = np_masked_softmax(logits, None, inplace=True)
    out = np.einsum("hnt,thd->nhd", w, v)
    return out.reshape(q.shape[0], -1)


def embed_video_rows(net: InferenceNet, latents: np.ndarray, role: Role,
                     chunk_index: int) -> np.ndarray:
    cfg = net.cfg
    if chunk_index >= cfg.k_max:
        raise ValueError(f"chunk index {chunk_index} beyond k_max={cfg.k_max}")
    x = np_linear(latents, net["embed.latent_w"], net["embed.latent_b"])
    return (x + net["embed.role"][int(role)] + net["embed.chunk"][chunk_index]
            + net["embed.pos"][:cfg.n_video])


def embed_action_rows(net: InferenceNet, a_norm: np.ndarray, role: Role,
                      chunk_index: int) -> np.ndarray:
    cfg = net.cfg
    if chunk_index >= cfg.k_max:
        raise ValueError(f"chunk index {chunk_index} beyond k_max={cfg.k_max}")
    grouped = group_steps(a_norm, cfg.group_size)
    x = np_linear(np_silu(np_linear(grouped, net["ea.w1"], net["ea.b1"])),
                  net["ea.w2"], net["ea.b2"])
    return (x + net["embed.role"][int(role)] + net["embed.chunk"][chunk_index]
            + net["embed.pos"][:cfg.n_action])


def chunk_conditioning(net: InferenceNet, guidance: GuidanceChunk, ego: np.ndarray):
    """Per-layer guidance and ego cross-attention K/V for one decision step
    (computed once per chunk and reused across all denoising steps)."""
    cfg = net.cfg
    ids = np.asarray(guidance.token_ids, dtype=np.int64)
    if len(ids) != cfg.guidance_len:
        raise ValueError(f"guidance span of {len(ids)} tokens, model expects "
                         f"{cfg.guidance_len}")
    g_emb = net["embed.guidance_table"][ids] + net["embed.guidance_pos"][:len(ids)]
    e_raw = np.asarray(ego, dtype=np.float64).reshape(1, 3)
    e_emb = np_linear(np_silu(np_linear(e_raw, net["ego.w1"], net["ego.b1"])),
                      net["ego.w2"], net["ego.b2"])
    g_kv, e_kv = [], []
    for i in range(cfg.layers):
        p = f"layers.{i}"
        g_kv.append((
            _split_heads(np_linear(g_emb, net[f"{p}.xg.wk"], net[f"{p}.xg.bk"]), cfg.heads),
            _split_heads(np_linear(g_emb, net[f"{p}.xg.wv"], net[f"{p}.xg.bv"]), cfg.heads),
        ))
        e_kv.append((
            _split_heads(np_linear(e_emb, net[f"{p}.xe.wk"], net[f"{p}.xe.bk"]), cfg.heads),
            _split_heads(np_linear(e_emb, net[f"{p}.xe.wv"], net[f"{p}.xe.bv"]), cfg.heads),
        ))
    return g_kv, e_kv


def _pool_context(pools: dict, extra_k=None, extra_v=None):
    """Per-layer context K/V: video pool ++ action pool ++ extra rows."""
    layers = pools["video"].layers
    ctx_k, ctx_v = [], []
    for i in range(layers):
        ks, vs = [], []
        for name in ("video", "action"):
            if pools[name].keys[i] is not None:
                ks.append(pools[name].keys[i])
                vs.append(pools[name].values[i])
        if extra_k is not None:
            ks.append(extra_k[i])
            vs.append(extra_v[i])
        ctx_k.append(np.concatenate(ks, axis=0) if ks else None)
        ctx_v.append(np.concatenate(vs, axis=0) if vs else None)
    return ctx_k, ctx_v


def block_forward(net: InferenceNet, rows: np.ndarray, tau: float,
                  ctx_k, ctx_v, g_kv, e_kv):
    """One pass of the backbone over a single role span.

    Returns (final hidden [n, d], per-layer self keys, values, queries);
    the keys/values feed the memory pools, the queries feed retention.
    """
    cfg = net.cfg
    h = rows
    t_emb = _tau_embedding(net, tau)
    k_out, v_out, q_out = [], [], []
    for i in range(cfg.layers):
        p = f"layers.{i}"

        def mod(name):
            return np_linear(t_emb, net[f"{p}.mod.{name}.w"], net[f"{p}.mod.{name}.b"])

        x, _, _ = np_layernorm(h)
        x = x * (1.0 + mod("scale_sa")) + mod("shift_sa")
        q = _split_heads(np_linear(x, net[f"{p}.sa.wq"], net[f"{p}.sa.bq"]), cfg.heads)
        k_self = _split_heads(np_linear(x, net[f"{p}.sa.wk"], net[f"{p}.sa.bk"]), cfg.heads)
        v_self = _split_heads(np_linear(x, net[f"{p}.sa.wv"], net[f"{p}.sa.bv"]), cfg.heads)
        if ctx_k[i] is not None:
            k_att = np.concatenate([ctx_k[i], k_self], axis=0)
            v_att = np.concatenate([ctx_v[i], v_self], axis=0)
        else:
            k_att, v_att = k_self, v_self
        att = _ctx_attention(q, k_att, v_att)
        h = h + mod("gate_sa") * np_linear(att, net[f"{p}.sa.wo"], net[f"{p}.sa.bo"])

        y, _, _ = np_layernorm(h)
        y = y * net[f"{p}.ln_g.g"] + net[f"{p}.ln_g.b"]
        qg = _split_heads(np_linear(y, net[f"{p}.xg.wq"], net[f"{p}.xg.bq"]), cfg.heads)
        h = h + np_linear(_ctx_attention(qg, *g_kv[i]), net[f"{p}.xg.wo"], net[f"{p}.xg.bo"])

        y, _, _ = np_layernorm(h)
        y = y * net[f"{p}.ln_e.g"] + net[f"{p}.ln_e.b"]
        qe = _split_heads(np_linear(y, net[f"{p}.xe.wq"], net[f"{p}.xe.bq"]), cfg.heads)
        h = h + np_linear(_ctx_attention(qe, *e_kv[i]), net[f"{p}.xe.wo"], net[f"{p}.xe.bo"])

        z, _, _ = np_layernorm(h)
        z = z * (1.0 + mod("scale_mlp")) + mod("shift_mlp")
        m = np_linear(np_silu(np_linear(z, net[f"{p}.mlp.w1"], net[f"{p}.mlp.b1"])),
                      net[f"{p}.mlp.w2"], net[f"{p}.mlp.b2"])
        h = h + mod("gate_mlp") * m

        k_out.append(k_self)
        v_out.append(v_self)
        q_out.append(q)
    hf, _, _ = np_layernorm(h)
    hf = hf * net["final_ln.g"] + net["final_ln.b"]
    return hf, k_out, v_out, q_out


def clean_pass(net: InferenceNet, rows: np.ndarray, pools: dict, g_kv, e_kv,
               extra_k=None, extra_v=None):
    ctx_k, ctx_v = _pool_context(pools, extra_k, extra_v)
    return block_forward(net, rows, 0.0, ctx_k, ctx_v, g_kv, e_kv)


@dataclass
class GenerationResult:
    chunk_index: int
    latent: np.ndarray               # [N_x, d_z] partially denoised (tau 0.6)
    actions: np.ndarray              # [steps, 3] denormalized increments
    actions_norm: np.ndarray
    cv_kvs: tuple                    # per-layer (k, v) lists from the generated latent
    ca_kvs: tuple
    video_queries: list              # final-denoising-step queries, per layer
    action_queries: list


def generate_chunk(net: InferenceNet, stats: ActionStats, pools: dict,
                   chunk_index: int, guidance: GuidanceChunk, ego: np.ndarray,
                   rng_video, rng_action) -> GenerationResult:
    """Sample one future chunk without mutating the pools."""
    cfg = net.cfg
    g_kv, e_kv = chunk_conditioning(net, guidance, ego)
    ctx_k, ctx_v = _pool_context(pools)
    captured_vq: list = []

    def video_field(z, tau):
        rows = embed_video_rows(net, z, Role.NOISY_VIDEO, chunk_index)
        hidden, _, _, q = block_forward(net, rows, tau, ctx_k, ctx_v, g_kv, e_kv)
        captured_vq.clear()
        captured_vq.extend(q)
        return np_linear(hidden, net["head.video_w"], net["head.video_b"])

    z0 = rng_video.normal(cfg.n_video * cfg.d_z).reshape(cfg.n_video, cfg.d_z)
    z_hat = euler_integrate(video_field, z0, VIDEO_TAU_FROM, VIDEO_TAU_TO, VIDEO_STEPS)

    cv_rows = embed_video_rows(net, z_hat, Role.CLEAN_VIDEO, chunk_index)
    _, cv_k, cv_v, _ = clean_pass(net, cv_rows, pools, g_kv, e_kv)

    captured_aq: list = []

    def action_field(a, tau):
        rows = embed_action_rows(net, a, Role.NOISY_ACTION, chunk_index)
        ctx_ka, ctx_va = _pool_context(pools, cv_k, cv_v)
        hidden, _, _, q = block_forward(net, rows, tau, ctx_ka, ctx_va, g_kv, e_kv)
        captured_aq.clear()
        captured_aq.extend(q)
        da = np_linear(np_silu(np_linear(hidden, net["da.w1"], net["da.b1"])),
                       net["da.w2"], net["da.b2"])
        return da.reshape(cfg.steps_per_chunk, 3)

    a0 = rng_action.normal(cfg.steps_per_chunk * 3).reshape(cfg.steps_per_chunk, 3)
    a_norm = euler_integrate(action_field, a0, ACTION_TAU_FROM, ACTION_TAU_TO, ACTION_STEPS)

    ca_rows = embed_action_rows(net, a_norm, Role.CLEAN_ACTION, chunk_index)
    _, ca_k, ca_v, _ = clean_pass(net, ca_rows, pools, g_kv, e_kv, cv_k, cv_v)

    return GenerationResult(chunk_index=chunk_index, latent=z_hat,
                            actions=denormalize_actions(a_norm, stats),
                            actions_norm=a_norm,
                            cv_kvs=(cv_k, cv_v), ca_kvs=(ca_k, ca_v),
                            video_queries=captured_vq, action_queries=captured_aq)


def _chunk_tags(chunk_index: int, n: int, role: Role) -> list[tuple]:
    return [(chunk_index, t, int(role)) for t in range(n)]


def append_chunk(pools: dict, chunk_index: int, cv_kvs, ca_kvs,
                 video_queries, action_queries):
    """Retention update for both pools with one chunk's clean KVs."""
    cfg_n_video = cv_kvs[0][0].shape[0]
    cfg_n_action = ca_kvs[0][0].shape[0]
    rep_v = pools["video"].update(cv_kvs[0], cv_kvs[1],
                                  _chunk_tags(chunk_index, cfg_n_video, Role.CLEAN_VIDEO),
                                  queries=video_queries)
    rep_a = pools["action"].update(ca_kvs[0], ca_kvs[1],
                                   _chunk_tags(chunk_index, cfg_n_action, Role.CLEAN_ACTION),
                                   queries=action_queries)
    return rep_v, rep_a


def rollout_chunk(net: InferenceNet, stats: ActionStats, pools: dict,
                  chunk_index: int, guidance: GuidanceChunk, ego: np.ndarray,
                  rng_video, rng_action):
    """Generate the next chunk and fold its KVs into the pools."""
    gen = generate_chunk(net, stats, pools, chunk_index, guidance, ego,
                         rng_video, rng_action)
    reports = append_chunk(pools, chunk_index, gen.cv_kvs, gen.ca_kvs,
                           gen.video_queries, gen.action_queries)
    return gen, reports


def encode_observation(net: InferenceNet, pools: dict, chunk_index: int,
                       latents: np.ndarray, a_norm: np.ndarray,
                       guidance: GuidanceChunk, ego: np.ndarray):
    """Clean KV passes for an observed (real) chunk against the current pools.

    Returns (cv_kvs, ca_kvs, video_queries, action_queries); the queries are
    the clean rows' own, used when no generation step preceded the append.
    """
    g_kv, e_kv = chunk_conditioning(net, guidance, ego)
    cv_rows = embed_video_rows(net, latents, Role.CLEAN_VIDEO, chunk_index)
    _, cv_k, cv_v, cv_q = clean_pass(net, cv_rows, pools, g_kv, e_kv)
    ca_rows = embed_action_rows(net, a_norm, Role.CLEAN_ACTION, chunk_index)
    _, ca_k, ca_v, ca_q = clean_pass(net, ca_rows, pools, g_kv, e_kv, cv_k, cv_v)
    return (cv_k, cv_v), (ca_k, ca_v), cv_q, ca_q


# ---------------------------------------------------------------------------
# analytic memory / FLOP profiling


@dataclass
class ProfileReport:
    strategy: str
    horizon: int
    cached_floats: list          # after each chunk, both pools, all layers
    attention_flops: list        # per chunk, one self-attention layer
    peak_cache_bytes: int

    def to_records(self) -> list[dict]:
        return [{"step": i + 1, "cached_floats": cf, "attention_flops": fl,
                 "strategy": self.strategy}
                for i, (cf, fl) in enumerate(zip(self.cached_floats, self.attention_flops))]


def profile_memory_flops(config: ModelConfig, strategy: str, horizon_chunks: int,
                         budget_video: int = 128, budget_action: int = 32) -> ProfileReport:
    """Analytic cache sizes and attention FLOPs; no model execution.

    Attention cost per layer-step is 2 * n_q * n_k * d, summed over the
    chunk's denoising steps and clean-context passes; the selective
    strategy additionally pays its relevance-scoring pass.
    """
    if horizon_chunks < 1:
        raise ValueError("horizon must be at least one chunk")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    nx, na, d = config.n_video, config.n_action, config.d
    hist_v = hist_a = 0
    cached, flops = [], []
    for _ in range(horizon_chunks):
        hist = hist_v + hist_a
        step_flops = VIDEO_STEPS * 2 * nx * (hist + nx) * d
        step_flops += ACTION_STEPS * 2 * na * (hist + nx + na) * d
        step_flops += 2 * nx * (hist + nx) * d          # clean video pass
        step_flops += 2 * na * (hist + nx + na) * d     # clean action pass
        if strategy == STRATEGY_SELECTIVE:
            step_flops += 2 * nx * hist_v * d + 2 * na * hist_a * d
        if strategy == STRATEGY_FULL:
            hist_v += nx
            hist_a += na
        else:
            hist_v = min(hist_v + nx, budget_video)
            hist_a = min(hist_a + na, budget_action)
        cached.append((hist_v + hist_a) * 2 * config.layers * d)
        flops.append(step_flops)
    return ProfileReport(strategy=strategy, horizon=horizon_chunks,
                         cached_floats=cached, attention_flops=flops,
                         peak_cache_bytes=max(cached) * 8)
