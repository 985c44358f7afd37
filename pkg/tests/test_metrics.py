import numpy as np
import pytest

from minidrive.metrics import MetricsReport, ade, fde, predicted_positions


def test_perfect_prediction_zero_errors():
    gt = np.cumsum(np.ones((40, 2)) * 0.5, axis=0)
    assert ade(gt, gt) == 0.0
    assert fde(gt, gt) == 0.0


def test_constant_lateral_offset():
    gt = np.stack([np.linspace(0.5, 20, 40), np.zeros(40)], axis=1)
    pred = gt + np.array([0.0, 0.5])
    assert abs(ade(pred, gt) - 0.5) < 1e-12
    assert abs(fde(pred, gt) - 0.5) < 1e-12


def test_three_step_hand_computed():
    gt = np.array([[1.0, 0.0], [2.0, 0.0], [2.0, 1.0]])
    pred = np.zeros((3, 2))
    expected = (1.0 + 2.0 + np.sqrt(5.0)) / 3.0
    assert abs(ade(pred, gt) - expected) < 1e-12
    assert abs(fde(pred, gt) - np.sqrt(5.0)) < 1e-12


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))


def test_predicted_positions_integrate_in_ego_frame():
    incr = np.tile([[0.5, 0.0, 0.0]], (4, 1))
    pos = predicted_positions((1.0, 2.0, np.pi / 2), incr)
    assert np.allclose(pos[:, 0], 1.0, atol=1e-12)
    assert np.allclose(pos[:, 1], 2.0 + 0.5 * np.arange(1, 5), atol=1e-12)


def test_report_validates_nonnegative():
    with pytest.raises(ValueError):
        MetricsReport(ade_3s=-1.0, ade_4s=0.0, fde_3s=0.0, fde_4s=0.0)
