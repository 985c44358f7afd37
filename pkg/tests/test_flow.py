import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from minidrive import tensor as T
from minidrive.flow import FlowSample, augment_history, joint_loss, make_flow_sample
from minidrive.rng import RngStream


def test_tau_zero_returns_clean_data():
    data = np.random.default_rng(0).standard_normal((4, 3))
    fs = make_flow_sample(data, RngStream(1, 1), tau=0.0)
    assert np.array_equal(fs.noised, data)


def test_tau_one_returns_noise_endpoint():
    data = np.random.default_rng(0).standard_normal((4, 3))
    rng = RngStream(1, 1)
    eps = rng.normal(data.size).reshape(data.shape)
    fs = make_flow_sample(data, RngStream(1, 1), tau=1.0)
    assert np.array_equal(fs.noised, eps)
    assert np.array_equal(fs.target_velocity, eps - data)


def test_midpoint_linear_path():
    data = np.zeros((2, 2))
    rng = RngStream(2, 2)
    eps = rng.normal(4).reshape(2, 2)
    fs = make_flow_sample(data, RngStream(2, 2), tau=0.5)
    assert np.allclose(fs.noised, 0.5 * eps, atol=0)
    assert np.array_equal(fs.target_velocity, eps)


@given(st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_reconstruction_identity(seed):
    data = np.random.default_rng(seed).standard_normal((3, 5))
    fs = make_flow_sample(data, RngStream(seed, 9))
    assert np.abs(data - (fs.noised - fs.tau * fs.target_velocity)).max() < 1e-12


def test_target_velocity_independent_of_tau():
    data = np.random.default_rng(3).standard_normal((4, 4))
    a = make_flow_sample(data, RngStream(7, 7), tau=0.2)
    b = make_flow_sample(data, RngStream(7, 7), tau=0.9)
    assert np.array_equal(a.target_velocity, b.target_velocity)


def test_flow_sample_validates_tau():
    with pytest.raises(ValueError):
        FlowSample(tau=1.5, noised=np.zeros(2), target_velocity=np.zeros(2))


def test_joint_loss_zero_when_residuals_zero():
    v = np.ones((2, 3))
    a = np.ones((4, 3))
    assert joint_loss(v, v, a, a, beta_a=1.0).item() == 0.0


def test_joint_loss_weighted_sum():
    pv = np.zeros((2, 2))
    tv = np.full((2, 2), np.sqrt(2.0))       # video MSE 2
    pa = np.zeros((3,))
    ta = np.full((3,), np.sqrt(3.0))         # action MSE 3
    assert abs(joint_loss(pv, tv, pa, ta, beta_a=1.0).item() - 5.0) < 1e-12
    assert abs(joint_loss(pv, tv, pa, ta, beta_a=0.0).item() - 2.0) < 1e-12
    assert abs(joint_loss(pv, tv, pa, ta, beta_a=1.0, beta_video=0.0).item() - 3.0) < 1e-12


def test_joint_loss_symmetric_in_pred_target():
    r = np.random.default_rng(5)
    pv, tv = r.standard_normal((2, 2)), r.standard_normal((2, 2))
    pa, ta = r.standard_normal((3,)), r.standard_normal((3,))
    a = joint_loss(pv, tv, pa, ta, beta_a=0.7).item()
    b = joint_loss(tv, pv, ta, pa, beta_a=0.7).item()
    assert abs(a - b) < 1e-15


def test_joint_loss_shape_mismatch():
    with pytest.raises(ValueError):
        joint_loss(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros(3), np.zeros(3), 1.0)


def test_augment_zero_sigma_is_identity():
    tokens = [np.random.default_rng(0).standard_normal((4, 3))]
    out = augment_history(tokens, 0.0, RngStream(1, 1))
    assert np.array_equal(out[0], tokens[0])


def test_augment_deterministic():
    tokens = [np.ones((4, 3)), np.zeros((2, 3))]
    a = augment_history(tokens, 0.3, RngStream(5, 5))
    b = augment_history(tokens, 0.3, RngStream(5, 5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_augment_noise_std_matches_drawn_sigma():
    tokens = [np.zeros((64, 48))]
    rng = RngStream(9, 9)
    sigma = float(RngStream(9, 9).uniform(1)[0]) * 0.2
    out = augment_history(tokens, 0.2, rng)
    measured = out[0].std()
    assert abs(measured - sigma) / sigma < 0.10


def test_augment_rejects_negative_sigma():
    with pytest.raises(ValueError):
        augment_history([np.zeros((2, 2))], -0.1, RngStream(0, 0))
