"""Full-clip teacher-forced training.

Every iteration samples a batch of chunk windows, noises each chunk along
the rectified path at one shared flow time per chunk, hardens the clean
context copies with noisy-history augmentation, runs one batched forward,
and applies a decoupled-weight-decay update.  All randomness flows through
four named counter streams, so a (config, seed) pair replays bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import guidance as G
from .checkpoint import Checkpoint, save_checkpoint
from .data import manifest_clip_paths, read_clip, read_manifest
from .flow import augment_history, joint_loss, make_flow_sample
from .model import (ForwardInputs, MaskSet, ModelConfig, build_masks, forward,
                    init_model, trainable)
from .rng import (AUGMENT, FLOW_NOISE, FLOW_TAU, TRAIN_SAMPLER, RngStream,
                  stream_id)
from .tensor import Tensor
from .tokens import compute_action_stats, encode_video_chunk, normalize_actions


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    manifest: str
    iterations: int = 5000
    learning_rate: float = 1e-3
    batch_size: int = 4
    sigma_max: float = 0.2
    seed: int = 0
    milestones: tuple = ()
    decay_factor: float = 0.5
    window_chunks: int = 3
    full_clip_prob: float = 0.15
    log_every: int = 50
    out_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0 or self.window_chunks <= 0:
            raise ValueError("iterations, batch size, and window must be positive")
        if not self.milestones:
            self.milestones = tuple(int(self.iterations * f) for f in (0.5, 0.7, 0.9))
        self.milestones = tuple(self.milestones)
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be sorted ascending")

    def lr_at(self, iteration: int) -> float:
        passed = sum(1 for m in self.milestones if iteration >= m)
        return self.learning_rate * (self.decay_factor ** passed)


class AdamW:
    """Decoupled-weight-decay Adam over named parameter tensors.

    Decay applies to matrices and tables (ndim >= 2); biases and norm
    parameters are exempt.
    """

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 0.1):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * np.square(g)
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            if p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64) for k, v in state["v"].items()}


@dataclass
class ClipRecord:
    latents: np.ndarray        # [K, N_x, d_z]
    actions_norm: np.ndarray   # [K, steps, 3]
    guidance_ids: np.ndarray   # [K, guidance_len]
    ego: np.ndarray            # [K, 3]
    scenario: str
    chunks: int


class ClipDataset:
    """In-memory encoded view of a manifest; action stats come from the
    split itself unless frozen stats are supplied (held-out evaluation)."""

    def __init__(self, manifest_path, config: ModelConfig, projector: np.ndarray,
                 stats=None):
        self.manifest_path = Path(manifest_path)
        payload = read_manifest(manifest_path)
        paths = manifest_clip_paths(manifest_path)
        clips = []
        for entry, path in zip(payload["clips"], paths):
            clip = read_clip(path)
            cache = path.parent / (path.stem + ".guidance.json")
            if config.guidance_mode == G.GUIDANCE_MODE_SCENE and cache.exists():
                steps = G.load_guidance_cache(cache)
            else:
                steps = G.guidance_steps_for_clip(clip, config.guidance_mode,
                                                  config.guidance_len)
            clips.append((clip, steps))
        if stats is None:
            stats = compute_action_stats([c.actions for c, _ in clips])
        self.stats = stats
        self.records: list[ClipRecord] = []
        for clip, steps in clips:
            latents = np.stack([encode_video_chunk(clip.frames_chunk(k), projector)
                                for k in range(clip.chunks)])
            acts = np.stack([normalize_actions(clip.actions_chunk(k), stats)
                             for k in range(clip.chunks)])
            gids = np.array([s.token_ids for s in steps], dtype=np.int64)
            self.records.append(ClipRecord(latents=latents, actions_norm=acts,
                                           guidance_ids=gids,
                                           ego=clip.ego_states[:clip.chunks],
                                           scenario=clip.scenario,
                                           chunks=clip.chunks))
        if not self.records:
            raise TrainingError(f"manifest {manifest_path} lists no clips")
        self.chunks = self.records[0].chunks

    def __len__(self):
        return len(self.records)


@dataclass
class TrainResult:
    params: dict
    stats: object
    config: TrainConfig
    log: list
    checkpoint_path: Path | None


def _assemble_batch(config: TrainConfig, ds: ClipDataset, window: int,
                    sampler: RngStream, tau_s: RngStream, noise_s: RngStream,
                    aug_s: RngStream):
    cfg = config.model
    bsz = config.batch_size
    idx = sampler.integers(0, len(ds), bsz)
    hi = ds.chunks - window + 1
    starts = sampler.integers(0, hi, bsz)
    shape = dict(cl=[], nl=[], ca=[], na=[], tv=[], gid=[], ego=[], ci=[],
                 tgt_v=[], tgt_a=[])
    for b in range(bsz):
        rec = ds.records[int(idx[b])]
        s = int(starts[b])
        lat = [rec.latents[s + m] for m in range(window)]
        act = [rec.actions_norm[s + m] for m in range(window)]
        aug_lat = augment_history(lat, config.sigma_max, aug_s)
        aug_act = augment_history(act, config.sigma_max, aug_s)
        taus, nz, na_, tv, ta = [], [], [], [], []
        for m in range(window):
            tau = float(tau_s.uniform(1)[0])
            fv = make_flow_sample(lat[m], noise_s, tau=tau)
            fa = make_flow_sample(act[m], noise_s, tau=tau)
            taus.append(tau)
            nz.append(fv.noised)
            na_.append(fa.noised)
            tv.append(fv.target_velocity)
            ta.append(fa.target_velocity)
        shape["cl"].append(np.stack(aug_lat))
        shape["nl"].append(np.stack(nz))
        shape["ca"].append(np.stack(aug_act))
        shape["na"].append(np.stack(na_))
        shape["tv"].append(np.array(taus))
        shape["gid"].append(rec.guidance_ids[s:s + window])
        shape["ego"].append(rec.ego[s:s + window])
        shape["ci"].append(np.arange(s, s + window))
        shape["tgt_v"].append(np.stack(tv))
        shape["tgt_a"].append(np.stack(ta))
    inputs = ForwardInputs(
        clean_latents=np.stack(shape["cl"]), noisy_latents=np.stack(shape["nl"]),
        clean_actions=np.stack(shape["ca"]), noisy_actions=np.stack(shape["na"]),
        tau=np.stack(shape["tv"]), guidance_ids=np.stack(shape["gid"]),
        ego=np.stack(shape["ego"]), chunk_indices=np.stack(shape["ci"]))
    return inputs, np.stack(shape["tgt_v"]), np.stack(shape["tgt_a"])


def train(config: TrainConfig) -> TrainResult:
    """Run the full loop; returns final parameters, stats, and the loss log."""
    cfg = config.model
    params = init_model(cfg, config.seed)
    projector = params["frozen.patch_projector"].data
    ds = ClipDataset(config.manifest, cfg, projector)
    if ds.chunks < config.window_chunks:
        raise TrainingError("training window exceeds clip length")
    opt = AdamW(trainable(params))
    sampler = RngStream(config.seed, stream_id(TRAIN_SAMPLER))
    tau_s = RngStream(config.seed, stream_id(FLOW_TAU))
    noise_s = RngStream(config.seed, stream_id(FLOW_NOISE))
    aug_s = RngStream(config.seed, stream_id(AUGMENT))
    mask_cache: dict[int, MaskSet] = {}
    log: list[dict] = []

    for it in range(config.iterations):
        window = config.window_chunks
        if ds.chunks > config.window_chunks and config.full_clip_prob > 0:
            if float(sampler.uniform(1)[0]) < config.full_clip_prob:
                window = ds.chunks
        if window not in mask_cache:
            mask_cache[window] = build_masks(cfg, window)
        inputs, tgt_v, tgt_a = _assemble_batch(config, ds, window, sampler,
                                               tau_s, noise_s, aug_s)
        v_video, v_action = forward(params, cfg, mask_cache[window], inputs)
        loss = joint_loss(v_video, tgt_v, v_action, tgt_a,
                          beta_a=cfg.beta_a, beta_video=cfg.beta_video)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at iteration {it}")
        loss.backward()
        opt.step(config.lr_at(it))
        opt.zero_grad()
        if (it + 1) % config.log_every == 0 or it == 0 or it + 1 == config.iterations:
            log.append({
                "iteration": it + 1,
                "loss": float(loss.data),
                "video_loss": float(np.mean((v_video.data - tgt_v) ** 2)),
                "action_loss": float(np.mean((v_action.data - tgt_a) ** 2)),
                "lr": config.lr_at(it),
            })

    ckpt_path = None
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "checkpoint.wamk"
        ckpt = Checkpoint(config=cfg, params=params, stats=ds.stats,
                          opt_state=opt.state(), iteration=config.iterations,
                          rng_states={
                              "sampler": (sampler.seed, sampler.stream_id, sampler.counter),
                              "tau": (tau_s.seed, tau_s.stream_id, tau_s.counter),
                              "noise": (noise_s.seed, noise_s.stream_id, noise_s.counter),
                              "augment": (aug_s.seed, aug_s.stream_id, aug_s.counter),
                          })
        save_checkpoint(ckpt_path, ckpt)
        with open(out / "loss_log.jsonl", "w") as fh:
            for rec in log:
                fh.write(json.dumps(rec) + "\n")
    return TrainResult(params=params, stats=ds.stats, config=config, log=log,
                       checkpoint_path=ckpt_path)
