import math

import numpy as np
import pytest

from kpservo.autodiff import Tensor
from kpservo.gradcheck import grad_check
from kpservo.keypoint import KeypointSet, keypointer
from kpservo.servo import (MotionCommand, NonFiniteLossError, ServoHead,
                           servo_features, servo_loss, servo_loss_components,
                           total_loss)


def _kps(rng, B=2, K=3, grid=(8, 8)):
    return keypointer(Tensor(rng.normal(size=(B, K, *grid))), rho=2.5)


def test_output_dimensionality_and_unit_norm():
    rng = np.random.default_rng(0)
    head = ServoHead(3, motion_dim=4, rng=rng)
    left, right = _kps(rng), _kps(rng)
    cmd = head(left, right)
    assert cmd.u.shape == (2, 4) and cmd.beta.shape == (2,)
    np.testing.assert_allclose(np.linalg.norm(cmd.u.data, axis=1), 1.0, atol=1e-6)
    assert np.all((cmd.beta.data > 0) & (cmd.beta.data < 1))


def test_deterministic_given_seed():
    rng = np.random.default_rng(1)
    head = ServoHead(3, rng=np.random.default_rng(9))
    left, right = _kps(rng), _kps(rng)
    c1 = head(left, right)
    c2 = head(left, right)
    assert np.array_equal(c1.u.data, c2.u.data)
    assert np.array_equal(c1.beta.data, c2.beta.data)


def test_feature_order_is_contract():
    rng = np.random.default_rng(2)
    left, right = _kps(rng, B=1, K=2), _kps(rng, B=1, K=2)
    f = servo_features(left, right, "coords").data[0]
    lr, lc = left.coords_normalized()
    rr, rc = right.coords_normalized()
    expect = np.concatenate([lr.data[0], lc.data[0], left.alpha.data[0],
                             rr.data[0], rc.data[0], right.alpha.data[0]])
    np.testing.assert_allclose(f, expect, rtol=1e-6)
    # permuting channels changes the feature vector: order is meaningful
    perm = KeypointSet(left.row[:, ::-1], left.col[:, ::-1], left.alpha[:, ::-1],
                       None, left.grid_hw, left.rho)
    f2 = servo_features(perm, right, "coords").data[0]
    assert not np.allclose(f, f2)


def test_maps_mode_width():
    rng = np.random.default_rng(3)
    head = ServoHead(2, motion_dim=4, mode="maps", grid_hw=(8, 8), rng=rng)
    left, right = _kps(rng, K=2), _kps(rng, K=2)
    cmd = head(left, right)
    assert cmd.u.shape == (2, 4)
    assert head.h0.weight.shape[0] == 2 * 2 * 64


def _cmd(u, beta):
    return MotionCommand(u=Tensor(np.asarray(u, dtype=np.float64)),
                         beta=Tensor(np.asarray(beta, dtype=np.float64)),
                         degenerate=np.zeros(len(u), dtype=bool))


def test_loss_zero_at_perfect_prediction():
    u = np.array([[1.0, 0.0, 0.0, 0.0]])
    val = servo_loss(_cmd(u, [1.0]), u, np.array([1.0])).item()
    assert abs(val) < 1e-4


def test_loss_orthogonal_direction_closed_form():
    u_pred = np.array([[1.0, 0.0, 0.0, 0.0]])
    u_star = np.array([[0.0, 1.0, 0.0, 0.0]])
    val = servo_loss(_cmd(u_pred, [0.5]), u_star, np.array([1.0])).item()
    assert abs(val - (1.0 - math.log(0.5))) < 1e-6   # 1 + 0.6931


def test_loss_antialigned_direction_term_is_two():
    u_pred = np.array([[1.0, 0.0, 0.0, 0.0]])
    l_dir, _ = servo_loss_components(_cmd(u_pred, [0.5]), -u_pred, np.array([1.0]))
    assert abs(l_dir.item() - 2.0) < 1e-9


def test_direction_term_scales_with_beta_star():
    u_pred = np.array([[1.0, 0.0, 0.0, 0.0]])
    u_star = np.array([[0.0, 1.0, 0.0, 0.0]])
    for bs in (0.0, 0.3, 1.0):
        l_dir, _ = servo_loss_components(_cmd(u_pred, [0.5]), u_star, np.array([bs]))
        assert abs(l_dir.item() - bs) < 1e-9


def test_direction_gradient_vanishes_when_beta_star_zero():
    rng = np.random.default_rng(4)
    head = ServoHead(3, rng=rng)
    left, right = _kps(rng), _kps(rng)
    u_star = rng.normal(size=(2, 4))
    u_star /= np.linalg.norm(u_star, axis=1, keepdims=True)
    cmd = head(left, right)
    l_dir, _ = servo_loss_components(cmd, u_star, np.zeros(2))
    assert l_dir.item() == 0.0
    l_dir.backward()
    for _, p in head.named_parameters():
        assert p.grad is None or np.abs(p.grad).max() == 0.0


def test_servo_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    head = ServoHead(2, rng=rng, dtype=np.float64)
    z = Tensor(rng.normal(size=(2, 2, 6, 6)), requires_grad=True)
    u_star = rng.normal(size=(2, 4))
    u_star /= np.linalg.norm(u_star, axis=1, keepdims=True)
    beta_star = np.array([1.0, 0.6])
    def fn():
        kps = keypointer(z, rho=2.5)
        return servo_loss(head(kps, kps), u_star, beta_star)
    report = grad_check(fn, [("z", z)] + list(head.named_parameters()))
    assert max(report.values()) < 1e-3, report


def test_total_loss_sums_and_rejects_nonfinite():
    vals = [Tensor(np.asarray(v)) for v in (1.0, 2.0, 3.0, 4.0)]
    assert total_loss(*vals).item() == 10.0
    zeros = [Tensor(np.asarray(0.0))] * 4
    assert total_loss(*zeros).item() == 0.0
    bad = Tensor(np.asarray(float("nan")))
    with pytest.raises(NonFiniteLossError, match="proxi"):
        total_loss(vals[0], vals[1], bad, vals[3])
