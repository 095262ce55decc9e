import numpy as np
import pytest

from kpservo.autodiff import ShapeError, Tensor, concat, no_grad


def test_identity_passthrough():
    x = Tensor([1.0, 2.0, 3.0])
    assert np.array_equal((x + 0.0).data, [1.0, 2.0, 3.0])


def test_relu_forward():
    x = Tensor([-1.0, 0.0, 2.0])
    assert np.array_equal(x.relu().data, [0.0, 0.0, 2.0])


def test_two_layer_dense_matches_hand_matmul():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    w1, w2 = rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    out = (Tensor(x) @ Tensor(w1)).relu() @ Tensor(w2)
    ref = np.maximum(x @ w1, 0.0) @ w2
    np.testing.assert_allclose(out.data, ref, rtol=1e-6)


def test_backward_sum_gives_ones():
    w = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    w.sum().backward()
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_mse_scalar():
    w = Tensor(np.array([2.0]), requires_grad=True)
    ((w - 0.0) ** 2).sum().backward()
    np.testing.assert_allclose(w.grad, [4.0])


def test_backward_requires_scalar_loss():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (w * 2.0).backward()


def test_shared_parameter_grads_accumulate():
    w = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    loss = (w * 2.0).sum() + (w * w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, 2.0 + 2.0 * w.data)


def test_broadcasting_unbroadcasts_grad():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    c = Tensor(np.ones(()), requires_grad=True)
    ((a * b) + c).sum().backward()
    assert a.grad.shape == (2, 3)
    assert b.grad.shape == (1, 3) and np.allclose(b.grad, 2.0)
    assert c.grad.shape == () and np.allclose(c.grad, 6.0)


def test_matmul_shape_error_names_op():
    with pytest.raises(ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_max_routes_gradient_to_argmax():
    x = Tensor(np.array([[1.0, 5.0, 3.0], [4.0, 2.0, 6.0]]), requires_grad=True)
    x.max(axis=-1).sum().backward()
    assert np.array_equal(x.grad, [[0, 1, 0], [0, 0, 1]])


def test_getitem_backward_scatters():
    x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4), requires_grad=True)
    x[1:, :2].sum().backward()
    expect = np.zeros((3, 4))
    expect[1:, :2] = 1.0
    assert np.array_equal(x.grad, expect)


def test_concat_backward_splits():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    (concat([a, b], axis=1) * 2.0).sum().backward()
    assert np.allclose(a.grad, 2.0) and a.grad.shape == (2, 2)
    assert np.allclose(b.grad, 2.0) and b.grad.shape == (2, 3)


def test_no_grad_suppresses_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (w * 2.0).sum()
    assert y._parents == () and y._backward is None


def test_forward_deterministic_bit_identical():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 4)).astype(np.float32)
    w = rng.normal(size=(4, 4)).astype(np.float32)
    r1 = ((Tensor(x) @ Tensor(w)).sigmoid() * 3.0).sum().item()
    r2 = ((Tensor(x) @ Tensor(w)).sigmoid() * 3.0).sum().item()
    assert r1 == r2


def test_float64_stays_float64():
    x = Tensor(np.ones(3, dtype=np.float64))
    assert (x * 2.0).dtype == np.float64
    assert Tensor(np.ones(3, dtype=np.int64)).dtype == np.float32
