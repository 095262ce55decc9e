import numpy as np
import pytest

from kpservo.estimator import NotFittedError, VisualServo
from kpservo.scene import generate_dataset


@pytest.fixture(scope="module")
def tiny_ds():
    return generate_dataset("insert-shaft", 8, seed=31)


def test_get_set_params_round_trip():
    est = VisualServo(n_keypoints=5, epochs=3)
    params = est.get_params()
    assert params["n_keypoints"] == 5 and params["epochs"] == 3
    est.set_params(gamma=10.0, task="pick")
    assert est.gamma == 10.0 and est.task == "pick"
    # sklearn clone contract: constructing from get_params reproduces params
    clone = VisualServo(**est.get_params())
    assert clone.get_params() == est.get_params()


def test_set_params_rejects_unknown():
    with pytest.raises(ValueError, match="invalid parameter"):
        VisualServo().set_params(bogus=1)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        VisualServo().predict(np.zeros((1, 2, 64, 64)))


def test_fit_predict_transform_score(tiny_ds, tmp_path):
    est = VisualServo(n_keypoints=4, epochs=1, batch_size=8, adex=False, seed=0)
    est.fit(tiny_ds, out_dir=tmp_path / "run")
    out = est.predict(tiny_ds.gray[:3])
    assert out.shape == (3, 5)
    np.testing.assert_allclose(np.linalg.norm(out[:, :4], axis=1), 1.0, atol=1e-5)
    assert ((out[:, 4] >= 0) & (out[:, 4] <= 1)).all()
    kps = est.transform(tiny_ds.gray[:2])
    assert kps.shape == (2, 2, 4, 3)
    assert np.isfinite(est.score(tiny_ds))
    # single stereo pair is accepted
    single = est.predict(tiny_ds.gray[0])
    assert single.shape == (1, 5)


def test_load_checkpoint_roundtrip(tiny_ds, tmp_path):
    est = VisualServo(n_keypoints=4, epochs=1, batch_size=8, adex=False, seed=0)
    est.fit(tiny_ds, out_dir=tmp_path / "run")
    est2 = VisualServo().load_checkpoint(tmp_path / "run" / "checkpoint_final")
    a = est.predict(tiny_ds.gray[:2])
    b = est2.predict(tiny_ds.gray[:2])
    np.testing.assert_array_equal(a, b)


def test_input_validation_rejects_bad_shapes_and_ranges(tiny_ds, tmp_path):
    est = VisualServo(n_keypoints=4, epochs=1, batch_size=8, adex=False, seed=0)
    est.fit(tiny_ds, out_dir=tmp_path / "run")
    with pytest.raises(ValueError, match="stereo"):
        est.predict(np.zeros((1, 3, 64, 64)))
    with pytest.raises(ValueError, match="intensities"):
        est.predict(np.full((1, 2, 64, 64), 2.0))
    with pytest.raises(TypeError):
        est.score(12345)
