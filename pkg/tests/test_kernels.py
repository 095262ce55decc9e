import math

import numpy as np
import pytest

from kpservo.autodiff import ShapeError, Tensor
from kpservo import kernels
from kpservo.gradcheck import grad_check


def naive_conv2d(x, w, b, stride=1, padding=0, dilation=1):
    """Reference O(n^4) loop convolution."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - (dilation * (kh - 1) + 1)) // stride + 1
    Wo = (W + 2 * padding - (dilation * (kw - 1) + 1)) // stride + 1
    y = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for p in range(kh):
                            for q in range(kw):
                                acc += (w[o, c, p, q] *
                                        xp[n, c, i * stride + p * dilation,
                                           j * stride + q * dilation])
                    y[n, o, i, j] = acc
    return y


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 5))
    w = np.ones((1, 1, 1, 1))
    y = kernels.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
    np.testing.assert_allclose(y.data, x)


@pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2)])
def test_conv2d_matches_naive_loop(stride, padding, dilation):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    y = kernels.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, dilation)
    ref = naive_conv2d(x, w, b, stride, padding, dilation)
    np.testing.assert_allclose(y.data, ref, rtol=1e-10, atol=1e-12)


def test_conv2d_channel_mismatch_names_kernel():
    with pytest.raises(ShapeError, match="conv2d"):
        kernels.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 5, 3, 3))))


def test_conv_transpose_matches_gradient_definition():
    # convT(x, w) forward == d/dy conv(y, w) transpose relationship:
    # inner products <conv(a, w), x> == <a, convT(x, w)> for zero bias
    rng = np.random.default_rng(5)
    a = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 4, 4))     # conv weight (O=3, C=2)
    x = rng.normal(size=(1, 3, 4, 4))     # lives in conv output space
    y_conv = kernels.conv2d(Tensor(a), Tensor(w), None, stride=2, padding=1).data
    wt = np.transpose(w, (0, 1, 2, 3))    # convT weight layout (Cin=3, Cout=2)
    y_t = kernels.conv_transpose2d(Tensor(x), Tensor(wt), None, stride=2, padding=1).data
    np.testing.assert_allclose((y_conv * x).sum(), (a * y_t).sum(), rtol=1e-10)


def test_bce_closed_form():
    val = kernels.bce_loss(Tensor(np.array([0.5])), np.array([1.0])).item()
    assert abs(val - (-math.log(0.5))) < 1e-6
    assert abs(val - 0.6931) < 1e-4


def test_bce_perfect_prediction_near_zero():
    assert kernels.bce_loss(Tensor(np.array([1.0])), np.array([1.0])).item() < 1e-4


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((2, 3, 4, 4)))
    t = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
    assert abs(kernels.cross_entropy_logits(logits, t).item() - math.log(3)) < 1e-6


def test_mse_shift_by_constant():
    pred = Tensor(np.full((5, 5), 0.6))
    assert abs(kernels.mse_loss(pred, np.full((5, 5), 0.5)).item() - 0.01) < 1e-7


def test_spatial_softmax_sums_to_one():
    rng = np.random.default_rng(1)
    p = kernels.spatial_softmax(Tensor(rng.normal(size=(3, 4, 64)) * 5.0))
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-6)


def test_unit_rows_normalizes_and_flags():
    x = Tensor(np.array([[3.0, 4.0, 0.0, 0.0], [1e-9, 0.0, 0.0, 0.0]]))
    u, degenerate = kernels.unit_rows(x)
    assert abs(np.linalg.norm(u.data[0]) - 1.0) < 1e-6
    assert not degenerate[0] and degenerate[1]


@pytest.mark.parametrize("case", ["dense", "conv", "convt", "softmax", "ce", "bce"])
def test_kernel_gradients_match_finite_differences(case):
    rng = np.random.default_rng(hash(case) % (2 ** 31))
    if case == "dense":
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        ref = rng.normal(size=(3, 4))
        fn = lambda: (kernels.dense(x, w, b) * Tensor(ref)).sum()
        params = [("x", x), ("w", w), ("b", b)]
    elif case == "conv":
        x = Tensor(rng.normal(size=(2, 2, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        ref = rng.normal(size=(2, 3, 3, 3))
        fn = lambda: (kernels.conv2d(x, w, b, stride=2, padding=1) * Tensor(ref)).sum()
        params = [("x", x), ("w", w), ("b", b)]
    elif case == "convt":
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        ref = rng.normal(size=(2, 2, 8, 8))
        fn = lambda: (kernels.conv_transpose2d(x, w, b) * Tensor(ref)).sum()
        params = [("x", x), ("w", w), ("b", b)]
    elif case == "softmax":
        x = Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True)
        ref = rng.normal(size=(2, 3, 9))
        fn = lambda: (kernels.spatial_softmax(x) * Tensor(ref)).sum()
        params = [("x", x)]
    elif case == "ce":
        x = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True)
        t = rng.integers(0, 3, (2, 3, 3))
        fn = lambda: kernels.cross_entropy_logits(x, t)
        params = [("x", x)]
    else:
        x = Tensor(rng.uniform(0.1, 0.9, size=(4, 3)), requires_grad=True)
        t = rng.uniform(0, 1, size=(4, 3))
        fn = lambda: kernels.bce_loss(x, t)
        params = [("x", x)]
    report = grad_check(fn, params)
    assert max(report.values()) < 1e-3, report
