"""Rectified-flow path, joint training objective, and history augmentation.

The path is the linear interpolation x_tau = (1 - tau) * data + tau * eps
with eps ~ N(0, 1): tau = 0 is clean data, tau = 1 is the Gaussian
endpoint, and the (tau-independent) target velocity is eps - data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import RngStream


@dataclass
class FlowSample:
    tau: float
    noised: np.ndarray
    target_velocity: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.noised.shape != self.target_velocity.shape:
            raise ValueError("noised and target must share the data shape")


def make_flow_sample(data: np.ndarray, rng: RngStream, tau: float | None = None) -> FlowSample:
    """Noise `data` along the rectified path.

    Draw order is eps first (data.size normals), then tau (one uniform)
    unless a pinned tau is supplied.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise ValueError("flow data must be finite")
    eps = rng.normal(data.size).reshape(data.shape)
    if tau is None:
        tau = float(rng.uniform(1)[0])
    noised = (1.0 - tau) * data + tau * eps
    return FlowSample(tau=float(tau), noised=noised, target_velocity=eps - data)


def joint_loss(pred_v_video, target_v_video, pred_v_action, target_v_action,
               beta_a: float, beta_video: float = 1.0):
    """Joint flow-matching objective.

    Mean-square video residual plus beta_a times the mean-square action
    residual, each averaged over its own elements.  Setting beta_video = 0
    is the video-supervision-off ablation.  Returns a scalar Tensor when
    any prediction tracks gradients.
    """
    if beta_a < 0 or beta_video < 0:
        raise ValueError("loss weights must be nonnegative")
    pv = pred_v_video if isinstance(pred_v_video, T.Tensor) else T.tensor(pred_v_video)
    pa = pred_v_action if isinstance(pred_v_action, T.Tensor) else T.tensor(pred_v_action)
    if pv.shape != np.shape(target_v_video) or pa.shape != np.shape(target_v_action):
        raise ValueError("prediction/target shapes must match per stream")
    video_term = T.mse(pv, np.asarray(target_v_video, dtype=np.float64))
    action_term = T.mse(pa, np.asarray(target_v_action, dtype=np.float64))
    return T.add(T.scale(video_term, beta_video), T.scale(action_term, beta_a))


def augment_history(chunk_tokens: list[np.ndarray], sigma_max: float,
                    rng: RngStream) -> list[np.ndarray]:
    """Perturb clean context copies with per-chunk Gaussian noise.

    For each chunk: sigma ~ Uniform[0, sigma_max] (one draw), then one
    standard normal per element.  The noisy query copies are built from the
    untouched originals elsewhere; this only hardens the context stream.
    """
    if sigma_max < 0:
        raise ValueError("sigma_max must be nonnegative")
    out = []
    for tokens in chunk_tokens:
        tokens = np.asarray(tokens, dtype=np.float64)
        sigma = float(rng.uniform(1)[0]) * sigma_max
        noise = rng.normal(tokens.size).reshape(tokens.shape)
        out.append(tokens + sigma * noise)
    return out
