"""Small numpy feedforward network with hand-written reverse-mode gradients.

A forward pass over a batch returns the output together with a ``Tape`` that
records every pre-activation and activation. ``backward`` replays the tape in
reverse given dLoss/dOutput and returns a ``Gradients`` object shaped like the
parameters. Siamese training runs two forward passes on the same
``NetworkParams`` and sums the two arms' gradients.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import ConfigurationError, InvalidInputError, ShapeError, UsageError

ACTIVATIONS = ("relu", "tanh")
OUTPUT_TRANSFORMS = ("identity", "softplus")
PARAMS_FORMAT_VERSION = 1


@dataclass
class NetworkParams:
    layer_sizes: tuple
    weights: list  # each (fan_in, fan_out)
    biases: list
    activation: str = "relu"
    output_transform: str = "identity"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer_sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}, expected {expected}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ConfigurationError(f"unknown output transform {self.output_transform!r}")

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    def arrays(self):
        return [*self.weights, *self.biases]

    def copy(self):
        return NetworkParams(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_transform,
        )

    def digest(self):
        """sha256 over the architecture and the raw parameter bytes."""
        h = hashlib.sha256()
        h.update(repr((self.layer_sizes, self.activation, self.output_transform)).encode())
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_dict(self):
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "output_transform": self.output_transform,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported parameter format {doc.get('format_version')!r}")
        sizes = doc["layer_sizes"]
        weights = [
            np.asarray(w, dtype=np.float64).reshape(sizes[k], sizes[k + 1])
            for k, w in enumerate(doc["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        return cls(sizes, weights, biases, doc["activation"], doc["output_transform"])


@dataclass
class Gradients:
    weights: list
    biases: list

    def arrays(self):
        return [*self.weights, *self.biases]

    def __add__(self, other):
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


@dataclass
class Tape:
    """Recorded forward computation for one batch."""

    inputs: np.ndarray
    pre_activations: list
    activations: list  # activations[0] is the input batch
    output_pre: np.ndarray


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class TrainConfig:
    """Settings for one training stage. ``hidden`` sizes the network body."""

    epochs: int = 40
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 5
    hidden: tuple = (32,)
    activation: str = "relu"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 0:
            raise ConfigurationError("patience must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")

    def optimizer_state(self):
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate)


def erf(x):
    """Gauss error function; array-valued, rejects non-finite input."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("erf of non-finite value")
    out = special.erf(x)
    return float(out) if out.ndim == 0 else out


def erf_grad(x):
    return 2.0 / np.sqrt(np.pi) * np.exp(-np.square(x))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return special.expit(x)


def init_params(layer_sizes, seed, output_transform="identity", activation="relu"):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ConfigurationError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(sizes, weights, biases, activation, output_transform)


def _activate(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite network input")
    return x


def forward_recorded(params, X):
    """Batch forward pass (X is (n, d)); returns outputs (n,) and the tape."""
    X = _check_input(params, X)
    if X.ndim != 2:
        raise ShapeError("forward_recorded expects a 2-D batch")
    a = X
    pre, acts = [], [X]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if k == last:
            break
        a = _activate(z, params.activation)
        pre.append(z)
        acts.append(a)
    z_out = z[:, 0]
    out = softplus(z_out) if params.output_transform == "softplus" else z_out
    return out, Tape(X, pre, acts, z_out)


def forward(params, x):
    """Network output for one vector (-> float) or a batch of rows (-> array)."""
    x = _check_input(params, x)
    if x.ndim == 1:
        out, _ = forward_recorded(params, x[None, :])
        return float(out[0])
    out, _ = forward_recorded(params, x)
    return out


def backward(params, tape, grad_output):
    """Gradients of a scalar loss given dLoss/dOutput for every batch row."""
    if tape is None:
        raise UsageError("backward called without a recorded forward pass")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != tape.output_pre.shape:
        raise ShapeError(f"grad_output shape {g.shape} does not match batch {tape.output_pre.shape}")
    if params.output_transform == "softplus":
        g = g * sigmoid(tape.output_pre)
    delta = g[:, None]
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        gw[k] = tape.activations[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * _activate_grad(
                tape.pre_activations[k - 1], tape.activations[k], params.activation
            )
    return Gradients(gw, gb)


def optimizer_step(params, grads, state):
    """One sgd or bias-corrected adam update; returns new (params, state)."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ShapeError("gradient shapes do not match parameters")
    t = state.step + 1
    if state.kind == "sgd":
        new = [p - state.learning_rate * g for p, g in zip(p_arrays, g_arrays)]
        m1, m2 = state.first_moment, state.second_moment
    else:
        m1 = state.first_moment or [np.zeros_like(p) for p in p_arrays]
        m2 = state.second_moment or [np.zeros_like(p) for p in p_arrays]
        m1 = [state.beta1 * m + (1 - state.beta1) * g for m, g in zip(m1, g_arrays)]
        m2 = [state.beta2 * v + (1 - state.beta2) * g * g for v, g in zip(m2, g_arrays)]
        c1 = 1 - state.beta1**t
        c2 = 1 - state.beta2**t
        new = [
            p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
            for p, m, v in zip(p_arrays, m1, m2)
        ]
    n = len(params.weights)
    new_params = NetworkParams(params.layer_sizes, new[:n], new[n:], params.activation, params.output_transform)
    new_state = OptimizerState(
        state.kind, state.learning_rate, state.beta1, state.beta2, state.eps, t, m1, m2
    )
    return new_params, new_state


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class Standardizer:
    """Per-column mean/scale learned from training rows; zero-variance columns pass through."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        return cls(X.mean(axis=0), scale)

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["mean"], doc["scale"])


def write_json_atomic(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    tmp.replace(path)


def save_params(params, path):
    write_json_atomic(path, params.to_dict())


def load_params(path):
    return NetworkParams.from_dict(json.loads(Path(path).read_text()))
