"""scikit-learn compatible wrapper around the wave-aligned CNN, plus checkpoints."""

import io
import json
import os
import tempfile

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_labeled, require_both_classes
from .data import LabeledMatrix, stratified_indices
from .network import (ModelSpec, TrainConfig, TrainHistory, predict_proba, train,
                      wave_cnn_spec)

CHECKPOINT_FORMAT = "wavecnn-checkpoint"
CHECKPOINT_VERSION = 1


class WaveCNNClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier over short-format longitudinal rows.

    Input rows are feature-major: ``n_waves`` consecutive columns per
    feature. A 1x1 convolution first lifts every cell to ``filters[0]``
    channels; a second convolution with width and stride ``n_waves`` then
    summarises each feature's trajectory into ``filters[1]`` values, so
    information from different features is only mixed in the final dense
    sigmoid unit.

    Parameters
    ----------
    n_waves : int, default=5
    activation : {'relu', 'selu', 'elu', 'swish', 'leaky_relu'}, default='swish'
    filters : tuple of int, default=(8, 16)
    learning_rate : float, default=0.01
        Adam step size.
    batch_size : int, default=32
    max_epochs : int, default=100
    patience : int, default=10
        Epochs without validation-loss improvement before stopping.
    validation_fraction : float, default=0.2
        Stratified share of the training data held out for early stopping
        when ``fit`` is not given ``validation_data``.
    random_state : int, default=0

    Attributes
    ----------
    spec_ : ModelSpec
    params_ : dict of ndarray
        Weights from the epoch with the lowest validation loss.
    history_ : TrainHistory
    best_epoch_ : int
    """

    def __init__(self, n_waves=5, activation="swish", filters=(8, 16), learning_rate=0.01,
                 batch_size=32, max_epochs=100, patience=10, validation_fraction=0.2,
                 random_state=0):
        self.n_waves = n_waves
        self.activation = activation
        self.filters = filters
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.learning_rate, self.max_epochs, self.batch_size,
                           self.patience, self.random_state)

    def fit(self, X, y, validation_data=None):
        X, y = check_labeled(X, y)
        if X.shape[1] % self.n_waves:
            raise ValueError(f"{X.shape[1]} columns is not a multiple of n_waves={self.n_waves}")
        if validation_data is None:
            require_both_classes(y, "internal validation split")
            tr, va = stratified_indices(y, 1.0 - self.validation_fraction, self.random_state)
            train_set, val_set = LabeledMatrix(X[tr], y[tr]), LabeledMatrix(X[va], y[va])
        else:
            train_set = LabeledMatrix(X, y)
            val_set = LabeledMatrix(*check_labeled(*validation_data))
        self.spec_ = wave_cnn_spec(X.shape[1] // self.n_waves, self.n_waves,
                                   self.activation, tuple(self.filters))
        self.params_, self.history_ = train(self.spec_, train_set, val_set, self._train_config())
        self.best_epoch_ = self.history_.best_epoch
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        p = predict_proba(self.spec_, self.params_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def save(self, path, extra=None):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.spec_, self.params_, seed=self.random_state,
                        history=self.history_, extra={"estimator": self.get_params(), **(extra or {})})

    @classmethod
    def load(cls, path):
        ckpt = load_checkpoint(path)
        est_params = ckpt["extra"].get("estimator", {})
        if "filters" in est_params:
            est_params["filters"] = tuple(est_params["filters"])
        est = cls(**est_params)
        est.spec_, est.params_, est.history_ = ckpt["spec"], ckpt["params"], ckpt["history"]
        est.best_epoch_ = est.history_.best_epoch if est.history_ else None
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = est.spec_.input_length * est.spec_.input_channels
        return est


def _atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, spec, params, seed=None, history=None, extra=None):
    """Write a self-describing ``.npz``: raw float64 arrays plus a JSON header."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "param_names": list(params),
        "seed": seed,
        "history": None if history is None else history.to_dict(),
        "extra": extra or {},
    }
    arrays = {f"param:{k}": np.asarray(v, dtype=np.float64) for k, v in params.items()}
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, allow_nan=True)), **arrays)
    _atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {meta['version']} is newer than supported")
        params = {k: npz[f"param:{k}"].copy() for k in meta["param_names"]}
    spec = ModelSpec.from_dict(meta["spec"])
    history = None if meta["history"] is None else TrainHistory.from_dict(meta["history"])
    return {"spec": spec, "params": params, "seed": meta["seed"], "history": history,
            "extra": meta["extra"], "version": meta["version"]}
