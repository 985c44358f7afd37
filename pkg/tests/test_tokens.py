import numpy as np
import pytest

from minidrive import tensor as T
from minidrive.tokens import (ActionStats, compute_action_stats,
                              decode_action_velocity, decode_video_chunk,
                              denormalize_actions, encode_actions,
                              encode_video_chunk, make_projector,
                              normalize_actions, patchify)


def _frames(seed=0, f=4, h=32, w=32, c=3):
    return np.random.default_rng(seed).random((f, h, w, c))


def test_patch_count_shape_arithmetic():
    z = encode_video_chunk(_frames(), make_projector(48, 192, seed=7))
    assert z.shape == (4 * 16, 48)


def test_identity_projector_roundtrip_exact():
    frames = _frames(1)
    proj = np.eye(192)
    z = encode_video_chunk(frames, proj)
    back = decode_video_chunk(z, proj, 4, 32, 32, 3)
    assert np.array_equal(back, frames)


def test_orthonormal_projection_contracts_norms():
    frames = _frames(2)
    proj = make_projector(48, 192, seed=3)
    assert np.allclose(proj @ proj.T, np.eye(48), atol=1e-10)
    z = encode_video_chunk(frames, proj)
    patches = patchify(frames, 8)
    assert (np.linalg.norm(z, axis=1) <= np.linalg.norm(patches, axis=1) + 1e-12).all()


def test_zero_latents_decode_to_zero_frames():
    proj = make_projector(48, 192, seed=3)
    out = decode_video_chunk(np.zeros((64, 48)), proj, 4, 32, 32, 3)
    assert (out == 0).all()


def test_decode_shape_and_finite():
    proj = make_projector(48, 192, seed=4)
    z = np.random.default_rng(0).standard_normal((64, 48))
    out = decode_video_chunk(z, proj, 4, 32, 32, 3)
    assert out.shape == (4, 32, 32, 3)
    assert np.isfinite(out).all()


def test_projector_deterministic_and_rejects_fat_latent():
    a = make_projector(8, 16, seed=5)
    b = make_projector(8, 16, seed=5)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        make_projector(17, 16, seed=5)


def test_normalize_mean_gives_zero():
    stats = ActionStats(mean=np.array([1.0, 2.0, 3.0]), std=np.array([2.0, 2.0, 2.0]))
    out = normalize_actions(np.array([[1.0, 2.0, 3.0]]), stats)
    assert np.array_equal(out, np.zeros((1, 3)))


def test_normalize_denormalize_roundtrip():
    stats = ActionStats(mean=np.array([0.3, -0.1, 0.02]), std=np.array([0.5, 0.2, 0.01]))
    a = np.random.default_rng(1).standard_normal((40, 3))
    back = denormalize_actions(normalize_actions(a, stats), stats)
    assert np.abs(back - a).max() < 1e-12


def test_stats_normalize_training_split_to_unit_moments():
    arrays = [np.random.default_rng(i).standard_normal((40, 3)) * [0.5, 0.1, 0.02]
              + [0.4, 0.0, 0.001] for i in range(20)]
    stats = compute_action_stats(arrays)
    normed = np.concatenate([normalize_actions(a, stats) for a in arrays])
    assert np.abs(normed.mean(axis=0)).max() < 1e-6
    assert np.abs(normed.std(axis=0) - 1.0).max() < 1e-6


def test_stats_require_positive_std():
    with pytest.raises(ValueError):
        ActionStats(mean=np.zeros(3), std=np.array([1.0, 0.0, 1.0]))


def _mlp_params(rng, fan_in, hidden, fan_out, zero_out=False):
    w1 = T.tensor(rng.standard_normal((fan_in, hidden)) * 0.2, requires_grad=True)
    b1 = T.tensor(rng.standard_normal(hidden) * 0.1, requires_grad=True)
    w2 = T.tensor(np.zeros((hidden, fan_out)) if zero_out
                  else rng.standard_normal((hidden, fan_out)) * 0.2, requires_grad=True)
    b2 = T.tensor(rng.standard_normal(fan_out) * 0.1, requires_grad=True)
    return w1, b1, w2, b2


def test_encode_actions_token_count():
    rng = np.random.default_rng(0)
    w1, b1, w2, b2 = _mlp_params(rng, 12, 16, 8)
    out = encode_actions(rng.standard_normal((40, 3)), w1, b1, w2, b2, group_size=4)
    assert out.shape == (10, 8)


def test_encode_actions_zero_weights_give_bias():
    rng = np.random.default_rng(1)
    w1 = T.tensor(np.zeros((12, 16)))
    b1 = T.tensor(np.zeros(16))
    w2 = T.tensor(np.zeros((16, 8)))
    b2 = T.tensor(rng.standard_normal(8))
    out = encode_actions(rng.standard_normal((40, 3)), w1, b1, w2, b2, group_size=4)
    assert np.allclose(out.data, np.tile(b2.data, (10, 1)), atol=0)


def test_encode_actions_rejects_indivisible_steps():
    rng = np.random.default_rng(2)
    w1, b1, w2, b2 = _mlp_params(rng, 12, 16, 8)
    with pytest.raises(ValueError):
        encode_actions(rng.standard_normal((41, 3)), w1, b1, w2, b2, group_size=4)


def test_encode_actions_grouping_locality():
    rng = np.random.default_rng(3)
    w1, b1, w2, b2 = _mlp_params(rng, 6, 8, 4)
    a = rng.standard_normal((8, 3))
    base = encode_actions(a, w1, b1, w2, b2, group_size=2).data
    a2 = a.copy()
    a2[0], a2[7] = a[7], a[0]      # steps in groups 0 and 3
    swapped = encode_actions(a2, w1, b1, w2, b2, group_size=2).data
    assert not np.allclose(base[0], swapped[0])
    assert not np.allclose(base[3], swapped[3])
    assert np.array_equal(base[1:3], swapped[1:3])


def test_encode_actions_gradcheck():
    rng = np.random.default_rng(4)
    w1, b1, w2, b2 = _mlp_params(rng, 6, 6, 4)
    a = rng.standard_normal((8, 3))
    tgt = rng.standard_normal((4, 4))
    rep = T.gradcheck(lambda: T.mse(encode_actions(a, w1, b1, w2, b2, 2), tgt),
                      dict(w1=w1, b1=b1, w2=w2, b2=b2), eps=1e-5)
    assert max(rep.values()) < 1e-6


def test_decode_action_velocity_shapes_and_bias():
    rng = np.random.default_rng(5)
    w1 = T.tensor(np.zeros((8, 16)))
    b1 = T.tensor(np.zeros(16))
    w2 = T.tensor(np.zeros((16, 12)))
    b2 = T.tensor(rng.standard_normal(12))
    out = decode_action_velocity(rng.standard_normal((10, 8)), w1, b1, w2, b2, 4)
    assert out.shape == (40, 3)
    assert np.allclose(out.data, np.tile(b2.data.reshape(4, 3), (10, 1)), atol=0)


def test_decode_action_velocity_gradcheck():
    rng = np.random.default_rng(6)
    w1, b1, w2, b2 = _mlp_params(rng, 8, 6, 6)
    h = rng.standard_normal((3, 8))
    tgt = rng.standard_normal((6, 3))
    rep = T.gradcheck(lambda: T.mse(decode_action_velocity(h, w1, b1, w2, b2, 2), tgt),
                      dict(w1=w1, b1=b1, w2=w2, b2=b2), eps=1e-5)
    assert max(rep.values()) < 1e-6
