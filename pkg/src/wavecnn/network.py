"""Small numpy engine for the wave-aligned 1D CNN.

Topology: a stack of ``conv1d -> activation`` layers, a flatten, and a single
sigmoid output unit. Tensors are ``(batch, length, channels)`` in row-major
order, float64 throughout. Parameters live in a plain ``dict`` of arrays
with keys ``conv{i}.w`` (filters, width, in_channels), ``conv{i}.b``,
``dense.w`` (flat, 1) and ``dense.b``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .metrics import accuracy, auc_from_scores

SELU_LAMBDA = 1.0507009873554804934
SELU_ALPHA = 1.6732632423543772848
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
PROB_CLAMP = 1e-7


class TrainingDivergedError(RuntimeError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(x):
    return np.maximum(x, 0.0), (x > 0).astype(np.float64)


def _leaky_relu(x):
    pos = x > 0
    return np.where(pos, x, LEAKY_SLOPE * x), np.where(pos, 1.0, LEAKY_SLOPE)


def _elu(x):
    pos = x > 0
    e = np.expm1(np.minimum(x, 0.0))
    return np.where(pos, x, ELU_ALPHA * e), np.where(pos, 1.0, ELU_ALPHA * (e + 1.0))


def _selu(x):
    pos = x > 0
    e = np.expm1(np.minimum(x, 0.0))
    value = SELU_LAMBDA * np.where(pos, x, SELU_ALPHA * e)
    return value, SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * (e + 1.0))


def _swish(x):
    s = sigmoid(x)
    return x * s, s + x * s * (1.0 - s)


ACTIVATIONS = {
    "relu": _relu,
    "selu": _selu,
    "elu": _elu,
    "swish": _swish,
    "leaky_relu": _leaky_relu,
}


def activation_eval(name, x):
    """Return ``(value, derivative)`` of the named activation at ``x``."""
    try:
        fn = ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; valid: {sorted(ACTIVATIONS)}") from None
    value, deriv = fn(np.asarray(x, dtype=np.float64))
    if np.ndim(x) == 0:
        return float(value), float(deriv)
    return value, deriv


# -- topology ------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    filters: int
    width: int
    stride: int

    def __post_init__(self):
        if self.filters < 1 or self.width < 1 or self.stride < 1:
            raise ValueError(f"invalid conv layer {self}")


@dataclass(frozen=True)
class ModelSpec:
    """Conv stack followed by flatten and a one-unit sigmoid output."""

    input_length: int
    conv_layers: tuple
    activation: str = "swish"
    input_channels: int = 1

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; valid: {sorted(ACTIVATIONS)}")
        object.__setattr__(self, "conv_layers", tuple(
            c if isinstance(c, ConvSpec) else ConvSpec(*c) for c in self.conv_layers))
        self.layer_shapes()

    def layer_shapes(self):
        """``[(L, C)]`` for the input and after each conv layer."""
        L, C = self.input_length, self.input_channels
        shapes = [(L, C)]
        for i, conv in enumerate(self.conv_layers):
            if L < conv.width or (L - conv.width) % conv.stride:
                raise ValueError(
                    f"conv{i}: length {L} incompatible with width {conv.width}, stride {conv.stride}")
            L = (L - conv.width) // conv.stride + 1
            C = conv.filters
            shapes.append((L, C))
        return shapes

    @property
    def flat_size(self):
        L, C = self.layer_shapes()[-1]
        return L * C

    def param_shapes(self):
        shapes = {}
        C = self.input_channels
        for i, conv in enumerate(self.conv_layers):
            shapes[f"conv{i}.w"] = (conv.filters, conv.width, C)
            shapes[f"conv{i}.b"] = (conv.filters,)
            C = conv.filters
        shapes["dense.w"] = (self.flat_size, 1)
        shapes["dense.b"] = (1,)
        return shapes

    def to_dict(self):
        return {"input_length": self.input_length, "input_channels": self.input_channels,
                "activation": self.activation,
                "conv_layers": [[c.filters, c.width, c.stride] for c in self.conv_layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_length"], tuple(ConvSpec(*c) for c in d["conv_layers"]),
                   d["activation"], d.get("input_channels", 1))


def wave_cnn_spec(n_features, n_waves=5, activation="swish", filters=(8, 16)):
    """The wave-aligned architecture: a 1x1 conv mixing step, then a
    width=stride=``n_waves`` conv that reads one feature trajectory per
    output position."""
    return ModelSpec(n_features * n_waves,
                     (ConvSpec(filters[0], 1, 1), ConvSpec(filters[1], n_waves, n_waves)),
                     activation)


def init_params(spec, seed=0):
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        if name == "dense.w":
            fan_in, fan_out = shape
        else:
            K, S, C = shape
            fan_in, fan_out = S * C, S * K
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def zero_params(spec):
    return {name: np.zeros(shape) for name, shape in spec.param_shapes().items()}


def _check_params(spec, params):
    for name, shape in spec.param_shapes().items():
        if name not in params:
            raise KeyError(f"missing parameter {name!r}")
        if params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")


# -- layers ----------------------------------------------------------------------

def _output_length(L, width, stride, layer="conv"):
    if L < width or (L - width) % stride:
        raise ValueError(f"{layer}: input length {L} incompatible with width {width}, stride {stride}")
    return (L - width) // stride + 1


def _patches(x, width, stride, Lout):
    n, L, C = x.shape
    if width == stride and L == Lout * width:
        return x.reshape(n, Lout, width * C)
    win = sliding_window_view(x, width, axis=1)[:, ::stride][:, :Lout]   # (n, Lout, C, width)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, Lout, width * C)


def conv1d_forward(x, kernel, bias, stride, layer="conv"):
    """Valid 1-D convolution (cross-correlation), no padding.

    ``out[n, p, k] = bias[k] + sum_{s, c} x[n, p*stride + s, c] * kernel[k, s, c]``

    With ``width == stride`` the input splits into independent segments and
    each output position is the dot product of one segment with the kernel.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{layer}: expected (batch, length, channels), got shape {x.shape}")
    K, S, C = kernel.shape
    if x.shape[2] != C:
        raise ValueError(f"{layer}: input has {x.shape[2]} channels, kernel {kernel.shape} expects {C}")
    if bias.shape != (K,):
        raise ValueError(f"{layer}: bias shape {bias.shape} != ({K},)")
    Lout = _output_length(x.shape[1], S, stride, layer)
    if S == 1 and C == 1 and stride == 1:
        return x * kernel.reshape(1, K) + bias
    P = _patches(x, S, stride, Lout)
    return P @ kernel.reshape(K, S * C).T + bias


def conv1d_backward(dout, x, kernel, stride):
    """Gradients ``(dx, dkernel, dbias)`` of a :func:`conv1d_forward` call."""
    K, S, C = kernel.shape
    n, L, _ = x.shape
    Lout = dout.shape[1]
    P = _patches(x, S, stride, Lout)
    dout2 = dout.reshape(n * Lout, K)
    dkernel = (dout2.T @ P.reshape(n * Lout, S * C)).reshape(K, S, C)
    dbias = dout2.sum(axis=0)
    dP = (dout2 @ kernel.reshape(K, S * C)).reshape(n, Lout, S, C)
    if S == stride and L == Lout * S:
        dx = dP.reshape(n, L, C)
    else:
        dx = np.zeros_like(x)
        for s in range(S):
            dx[:, s:s + stride * (Lout - 1) + 1:stride] += dP[:, :, s, :]
    return dx, dkernel, dbias


def _finite(arr, where):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values at {where}")
    return arr


# -- network -------------------------------------------------------------------------

@dataclass
class ForwardCache:
    spec: ModelSpec
    params: dict
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    derivs: list = field(default_factory=list)
    flat: np.ndarray = None
    probs: np.ndarray = None


def as_tensor(X, spec):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3 or X.shape[1:] != (spec.input_length, spec.input_channels):
        raise ValueError(
            f"input shape {X.shape} does not match model input "
            f"({spec.input_length}, {spec.input_channels})")
    return _finite(X, "input")


def forward(spec, params, X, keep_cache=True):
    """Probabilities for a batch, plus the cache ``backward`` needs."""
    _check_params(spec, params)
    h = as_tensor(X, spec)
    cache = ForwardCache(spec, params) if keep_cache else None
    act = ACTIVATIONS[spec.activation]
    for i, conv in enumerate(spec.conv_layers):
        z = _finite(conv1d_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"],
                                   conv.stride, f"conv{i}"), f"conv{i}")
        a, d = act(z)
        if keep_cache:
            cache.inputs.append(h)
            cache.derivs.append(d)
        h = a
    flat = h.reshape(h.shape[0], -1)
    logits = _finite(flat @ params["dense.w"] + params["dense.b"], "dense")[:, 0]
    probs = sigmoid(logits)
    if keep_cache:
        cache.flat = flat
        cache.probs = probs
    return probs, cache


def predict_proba(spec, params, X):
    return forward(spec, params, X, keep_cache=False)[0]


def bce_loss(probs, y):
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if probs.shape != y.shape:
        raise ValueError(f"length mismatch: {probs.shape[0]} probs vs {y.shape[0]} labels")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def backward(spec, params, cache, y):
    """Gradients of ``bce_loss(forward(X), y)`` for every parameter.

    The logit gradient is ``(p - y) / n``, i.e. the clamp only guards the
    reported loss value.
    """
    if cache is None or cache.spec != spec or cache.params is not params:
        raise ValueError("cache does not belong to this model/parameter set")
    y = np.asarray(y, dtype=np.float64).ravel()
    n = cache.probs.shape[0]
    if y.shape != (n,):
        raise ValueError(f"cache holds {n} rows, got {y.shape[0]} labels")
    dlogit = ((cache.probs - y) / n)[:, None]
    grads = {"dense.w": cache.flat.T @ dlogit, "dense.b": dlogit.sum(axis=0)}
    dh = (dlogit @ params["dense.w"].T).reshape(n, *spec.layer_shapes()[-1])
    for i in reversed(range(len(spec.conv_layers))):
        dz = dh * cache.derivs[i]
        dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv1d_backward(
            dz, cache.inputs[i], params[f"conv{i}.w"], spec.conv_layers[i].stride)
    return grads


# -- optimiser -----------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient {k!r} shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, m=new_m, v=new_v, t=t)


# -- training --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience``
    epochs without a strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = None
        self.wait = 0

    def update(self, epoch, loss):
        """Record one epoch; returns True when this epoch is the new best."""
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.wait = loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self):
        return self.wait >= self.patience


HISTORY_FIELDS = ("epoch", "train_loss", "train_accuracy", "train_auc",
                  "val_loss", "val_accuracy", "val_auc")


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    best_epoch: int = None
    stopped_epoch: int = None

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_dict(self):
        return {"rows": self.rows, "best_epoch": self.best_epoch, "stopped_epoch": self.stopped_epoch}

    @classmethod
    def from_dict(cls, d):
        return cls([dict(r) for r in d["rows"]], d["best_epoch"], d["stopped_epoch"])


def _safe_auc(probs, y):
    if np.unique(y).size < 2:
        return float("nan")
    return auc_from_scores(probs, y)


def _evaluate(spec, params, data):
    probs = predict_proba(spec, params, data.X)
    return bce_loss(probs, data.y), accuracy(probs, data.y), _safe_auc(probs, data.y)


def train(spec, train_set, val_set, config=TrainConfig(), params=None):
    """Mini-batch Adam on BCE with early stopping on validation loss.

    Parameters
    ----------
    spec : ModelSpec
    train_set, val_set : LabeledMatrix
    config : TrainConfig
    params : dict, optional
        Starting parameters; Glorot-initialised from ``config.seed`` if omitted.

    Returns
    -------
    best_params : dict
        Parameters from the epoch with the lowest validation loss.
    history : TrainHistory
    """
    X, y = np.asarray(train_set.X, dtype=np.float64), np.asarray(train_set.y)
    if len(y) == 0 or len(val_set.y) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if X.shape[1] != spec.input_length * spec.input_channels:
        raise ValueError(f"feature dimension {X.shape[1]} != model input {spec.input_length}")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, rng)
    state = AdamState.zeros_like(params, lr=config.learning_rate)
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()
    best = {k: v.copy() for k, v in params.items()}

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(y))
        seen = np.empty(len(y))
        for b, start in enumerate(range(0, len(y), config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                probs, cache = forward(spec, params, X[idx])
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss = bce_loss(probs, y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            seen[start:start + len(idx)] = probs
            params, state = adam_step(params, backward(spec, params, cache, y[idx]), state)

        # train metrics use the probabilities seen during the epoch's batches
        seen_y = y[order]
        tr = (bce_loss(seen, seen_y), accuracy(seen, seen_y), _safe_auc(seen, seen_y))
        va = _evaluate(spec, params, val_set)
        if not math.isfinite(va[0]):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.rows.append(dict(zip(HISTORY_FIELDS, (epoch, *tr, *va))))
        if stopper.update(epoch, va[0]):
            best = {k: v.copy() for k, v in params.items()}
        history.stopped_epoch = epoch
        if stopper.should_stop:
            break
    history.best_epoch = stopper.best_epoch
    return best, history
