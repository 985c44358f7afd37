import os

# keep BLAS single-threaded before numpy loads anywhere: these matmul
# shapes lose to thread sync overhead on small machines
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from minidrive.model import ModelConfig, init_model


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d=8, layers=1, heads=2, d_z=4, n_video=4, n_action=2,
                k_max=4, group_size=2, guidance_len=3, mlp_ratio=2,
                action_hidden=8, ego_hidden=4, patch=4, raster_h=8, raster_w=8,
                channels=1, frames_per_chunk=1, steps_per_chunk=4)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_config() -> ModelConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def small_params(small_config):
    return init_model(small_config, seed=0)


def randomize_params(params, seed=1, scale=0.05):
    """Give zero-initialized tables nonzero values so outputs are nontrivial."""
    r = np.random.default_rng(seed)
    for p in params.values():
        if p.requires_grad and np.abs(p.data).sum() == 0:
            p.data = r.standard_normal(p.data.shape) * scale
    return params
