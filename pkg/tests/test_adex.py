import numpy as np
import pytest

from kpservo.adex import (AdexConfig, adex_batch, fgsm, iterative_fgsm,
                          least_likely_fgsm)
from kpservo.autodiff import Tensor
from kpservo.kernels import cross_entropy_logits
from kpservo.model import ModelConfig, ServoModel
from kpservo.scene import generate_dataset
from kpservo.train import make_attack_fns


@pytest.fixture(scope="module")
def tiny_setup():
    ds = generate_dataset("insert-shaft", 4, seed=21)
    model = ServoModel(ModelConfig(n_keypoints=4), seed=3)
    b = np.arange(min(6, len(ds)))
    gray = ds.gray[b]
    fns = make_attack_fns(model, ds.depth[b], ds.seg[b], ds.u_star[b],
                          ds.beta_star[b], gamma=20.0)
    return gray, fns


def test_fgsm_zero_eps_identity(tiny_setup):
    gray, (loss_fn, _, _) = tiny_setup
    out = fgsm(loss_fn, gray, 0.0)
    np.testing.assert_array_equal(out, gray)


def test_fgsm_linf_bound_and_range(tiny_setup):
    gray, (loss_fn, _, _) = tiny_setup
    eps = 0.03
    out = fgsm(loss_fn, gray, eps)
    assert np.abs(out - gray).max() <= eps + 1e-7
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.array_equal(out, gray)


def test_fgsm_matches_hand_derived_sign_on_linear_model():
    # 2-pixel linear model: loss = w . x, so x' = clamp(x + eps * sign(w))
    w = np.array([0.7, -0.4])
    x = np.array([[0.5, 0.5]])
    def loss_fn(t: Tensor) -> Tensor:
        return (t * Tensor(w)).sum()
    out = fgsm(loss_fn, x, 0.05)
    np.testing.assert_allclose(out, [[0.55, 0.45]], atol=1e-7)


def test_iterative_fgsm_n1_equals_fgsm(tiny_setup):
    gray, (loss_fn, _, _) = tiny_setup
    a = fgsm(loss_fn, gray, 0.02)
    b = iterative_fgsm(loss_fn, gray, 0.02, 1)
    np.testing.assert_array_equal(a, b)


def test_iterative_fgsm_stays_in_ball(tiny_setup):
    gray, (loss_fn, _, _) = tiny_setup
    eps = 0.04
    out = iterative_fgsm(loss_fn, gray, eps, 3)
    assert np.abs(out - gray).max() <= eps + 1e-7
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_iterative_beats_single_step_on_quadratic():
    # curved loss: iterative ascent finds a higher value than one big step
    center = np.array([[0.45, 0.62]])
    A = np.array([1.0, 4.0])
    def loss_fn(t: Tensor) -> Tensor:
        d = t - Tensor(center)
        return (d * d * Tensor(A)).sum()
    x = np.array([[0.5, 0.6]])
    eps, n = 0.08, 4
    x_it = iterative_fgsm(loss_fn, x, eps, n)
    x_one = fgsm(loss_fn, x, eps)
    assert loss_fn(Tensor(x_it)).item() >= loss_fn(Tensor(x_one)).item() - 1e-12


def test_least_likely_increases_target_probability(tiny_setup):
    gray, (_, seg_loss_fn, ll_fn) = tiny_setup
    targets = ll_fn(gray)
    before = seg_loss_fn(Tensor(gray), targets).item()
    out = least_likely_fgsm(seg_loss_fn, ll_fn, gray, 0.05, 2)
    after = seg_loss_fn(Tensor(out), targets).item()
    assert np.abs(out - gray).max() <= 0.05 + 1e-7
    assert after < before   # CE toward the least-likely class decreased


def test_adex_batch_probability_zero_is_identity(tiny_setup):
    gray, fns = tiny_setup
    cfg = AdexConfig(probability=0.0)
    out, info = adex_batch(gray, cfg, np.random.default_rng(0), *fns)
    assert not info["applied"]
    np.testing.assert_array_equal(out, gray)


def test_adex_batch_reproducible_choices(tiny_setup):
    gray, fns = tiny_setup
    cfg = AdexConfig()
    seq1 = [adex_batch(gray, cfg, np.random.default_rng(42), *fns)[1] for _ in range(1)]
    seq2 = [adex_batch(gray, cfg, np.random.default_rng(42), *fns)[1] for _ in range(1)]
    assert seq1 == seq2


def test_adex_method_frequencies_near_uniform():
    cfg = AdexConfig(probability=1.0)
    rng = np.random.default_rng(7)
    counts = {m: 0 for m in cfg.methods}
    for _ in range(1000):
        method = cfg.methods[rng.integers(0, len(cfg.methods))]
        counts[method] += 1
    for m, c in counts.items():
        assert abs(c / 1000 - 1 / 3) < 0.05, counts


def test_adex_never_touches_labels(tiny_setup):
    gray, fns = tiny_setup
    ds = generate_dataset("insert-shaft", 2, seed=22)
    labels_before = (ds.u_star.copy(), ds.beta_star.copy(),
                     ds.depth.copy(), ds.seg.copy())
    cfg = AdexConfig(probability=1.0)
    adex_batch(gray, cfg, np.random.default_rng(3), *fns)
    assert np.array_equal(ds.u_star, labels_before[0])
    assert np.array_equal(ds.beta_star, labels_before[1])
    assert np.array_equal(ds.depth, labels_before[2])
    assert np.array_equal(ds.seg, labels_before[3])


def test_double_fgsm_within_two_eps(tiny_setup):
    gray, (loss_fn, _, _) = tiny_setup
    eps = 0.02
    once = fgsm(loss_fn, gray, eps)
    twice = fgsm(loss_fn, once, eps)
    assert np.abs(twice - gray).max() <= 2 * eps + 1e-7


def test_adex_config_validates_bounds():
    with pytest.raises(ValueError):
        AdexConfig(eps_lo=0.1, eps_hi=0.5)
    with pytest.raises(ValueError):
        AdexConfig(methods=("fgsm", "pgd"))
