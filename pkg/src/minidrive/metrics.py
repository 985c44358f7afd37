"""Displacement metrics for predicted ego trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import compose_actions


def predicted_positions(boundary_pose, increments: np.ndarray) -> np.ndarray:
    """Integrate 10 Hz ego-frame increments from a boundary pose -> [n, 2]."""
    return compose_actions(tuple(boundary_pose), increments)[1:, :2]


def ade(pred_xy: np.ndarray, gt_xy: np.ndarray) -> float:
    """Mean Euclidean displacement over all horizon steps."""
    if pred_xy.shape != gt_xy.shape:
        raise ValueError("prediction/ground-truth shapes differ")
    return float(np.linalg.norm(pred_xy - gt_xy, axis=-1).mean())


def fde(pred_xy: np.ndarray, gt_xy: np.ndarray) -> float:
    """Euclidean displacement at the final step."""
    if pred_xy.shape != gt_xy.shape:
        raise ValueError("prediction/ground-truth shapes differ")
    return float(np.linalg.norm(pred_xy[-1] - gt_xy[-1]))


@dataclass
class MetricsReport:
    ade_3s: float
    ade_4s: float
    fde_3s: float
    fde_4s: float
    per_scenario: dict = field(default_factory=dict)
    clip_count: int = 0
    horizon_seconds: float = 4.0
    ade_horizon: float | None = None
    fde_horizon: float | None = None

    def __post_init__(self):
        for name in ("ade_3s", "ade_4s", "fde_3s", "fde_4s"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {"ade_3s": self.ade_3s, "ade_4s": self.ade_4s,
                "fde_3s": self.fde_3s, "fde_4s": self.fde_4s,
                "horizon_seconds": self.horizon_seconds,
                "ade_horizon": self.ade_horizon, "fde_horizon": self.fde_horizon,
                "per_scenario": self.per_scenario, "clip_count": self.clip_count}
