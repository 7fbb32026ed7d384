import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wavecnn.estimator import WaveCNNClassifier, load_checkpoint, save_checkpoint
from wavecnn.network import init_params, predict_proba, wave_cnn_spec


def toy(n=120, seed=0):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, size=n)
    X = r.normal(0, 0.5, size=(n, 15)) + np.where(y[:, None] == 1, 1.0, -1.0)
    return X, y


def test_params_and_clone():
    est = WaveCNNClassifier(activation="elu", patience=4)
    p = est.get_params()
    assert p["activation"] == "elu" and p["patience"] == 4 and p["n_waves"] == 5
    twin = clone(est)
    assert twin.get_params() == p and twin is not est
    assert est.set_params(batch_size=8).batch_size == 8


def test_fit_predict():
    X, y = toy()
    est = WaveCNNClassifier(max_epochs=20, random_state=1).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (120, 2) and np.allclose(proba.sum(axis=1), 1.0)
    assert est.score(X, y) >= 0.9
    assert est.spec_.input_length == 15 and est.best_epoch_ >= 1
    assert est.predict(X).dtype == np.int64


def test_validation_data_used():
    X, y = toy()
    Xv, yv = toy(40, seed=1)
    est = WaveCNNClassifier(max_epochs=3).fit(X, y, validation_data=(Xv, yv))
    assert len(est.history_.rows) == 3


def test_columns_must_match_waves():
    X, y = toy()
    with pytest.raises(ValueError, match="multiple"):
        WaveCNNClassifier().fit(X[:, :14], y)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        WaveCNNClassifier().predict_proba(np.zeros((1, 15)))


def test_feature_count_checked():
    X, y = toy()
    est = WaveCNNClassifier(max_epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict_proba(np.zeros((1, 10)))


def test_estimator_round_trip(tmp_path):
    X, y = toy()
    est = WaveCNNClassifier(max_epochs=5, activation="selu", random_state=2).fit(X, y)
    est.save(tmp_path / "m.npz")
    back = WaveCNNClassifier.load(tmp_path / "m.npz")
    assert np.array_equal(back.predict_proba(X), est.predict_proba(X))
    assert back.get_params() == est.get_params()
    assert back.history_.rows == est.history_.rows


def test_checkpoint_bit_exact(tmp_path):
    spec = wave_cnn_spec(4, activation="leaky_relu")
    params = init_params(spec, 9)
    path = tmp_path / "c.npz"
    save_checkpoint(path, spec, params, seed=9, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert ck["spec"] == spec and ck["seed"] == 9 and ck["extra"] == {"note": "x"} and ck["version"] == 1
    assert all(np.array_equal(ck["params"][k], params[k]) for k in params)
    X = np.random.default_rng(0).normal(size=(6, 20))
    assert np.array_equal(predict_proba(spec, params, X), predict_proba(ck["spec"], ck["params"], X))
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp")]


def test_checkpoint_rejects_other_files(tmp_path):
    np.savez(tmp_path / "other.npz", meta=np.array('{"format": "something"}'))
    with pytest.raises(ValueError, match="not a"):
        load_checkpoint(tmp_path / "other.npz")
