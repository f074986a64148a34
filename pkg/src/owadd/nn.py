"""Small dense autoencoder written directly against numpy.

Hidden layers use ReLU, the output layer is linear. Training minimises the
mean absolute reconstruction error with Adam.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT = "owadd-autoencoder/1"
ACTIVATIONS = ("relu", "linear")


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or weights."""


@dataclass
class Layer:
    weights: np.ndarray  # (input_width, output_width)
    bias: np.ndarray  # (output_width,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("weights must be (in, out) and bias (out,)")

    @property
    def input_width(self) -> int:
        return self.weights.shape[0]

    @property
    def output_width(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 1e-3
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class Autoencoder:
    layers: list[Layer]
    input_dim: int
    seed: int = 0
    # number of completed train() calls; keys the shuffling stream
    train_calls: int = field(default=0)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an autoencoder needs at least one layer")
        if self.layers[0].input_width != self.input_dim:
            raise ValueError("first layer must take input_dim features")
        if self.layers[-1].output_width != self.input_dim:
            raise ValueError("last layer must reconstruct input_dim features")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.output_width != nxt.input_width:
                raise ValueError("adjacent layers are not dimension-compatible")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.output_width for layer in self.layers]

    def all_finite(self) -> bool:
        return all(np.isfinite(l.weights).all() and np.isfinite(l.bias).all() for l in self.layers)


def new_autoencoder(input_dim: int, hidden_widths: Sequence[int], seed: int = 0) -> Autoencoder:
    """Build ``input_dim -> hidden_widths... -> input_dim`` with Glorot-uniform weights."""
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    hidden_widths = list(hidden_widths)
    if not hidden_widths:
        raise ValueError("hidden_widths must be non-empty")
    if any(w < 1 for w in hidden_widths):
        raise ValueError("hidden widths must be positive")

    rng = np.random.default_rng(seed)
    widths = [input_dim, *hidden_widths, input_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        activation = "linear" if i == len(widths) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), activation))
    return Autoencoder(layers, input_dim, seed)


def _as_batch(model: Autoencoder, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got shape {x.shape}")
    return x


def _forward(model: Autoencoder, x: np.ndarray):
    """Forward pass keeping each layer's input and pre-activation."""
    inputs, pre = [], []
    h = x
    for layer in model.layers:
        inputs.append(h)
        z = h @ layer.weights + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, inputs, pre


def reconstruct(model: Autoencoder, x) -> np.ndarray:
    """Reconstruction of a single vector or a batch of row vectors."""
    single = np.ndim(x) == 1
    out = _forward(model, _as_batch(model, x))[0]
    return out[0] if single else out


def reconstruction_errors(model: Autoencoder, chunk) -> np.ndarray:
    """Per-sample L1 reconstruction error, in row order."""
    x = _as_batch(model, chunk)
    return np.abs(x - _forward(model, x)[0]).sum(axis=1)


def loss_and_gradients(model: Autoencoder, x) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean absolute error over all entries and its gradient per layer.

    The subgradient of |.| at zero is taken as 0.
    """
    x = _as_batch(model, x)
    out, inputs, pre = _forward(model, x)
    resid = out - x
    loss = float(np.abs(resid).mean())
    delta = np.sign(resid) / resid.size
    grads = []
    for layer, h, z in zip(reversed(model.layers), reversed(inputs), reversed(pre)):
        if layer.activation == "relu":
            delta = delta * (z > 0)
        grads.append((h.T @ delta, delta.sum(axis=0)))
        delta = delta @ layer.weights.T
    grads.reverse()
    return loss, grads


def train(model: Autoencoder, chunk, config: TrainConfig | None = None) -> Autoencoder:
    """Mini-batch Adam on the mean absolute reconstruction error.

    Updates ``model`` in place (continuing from its current weights) and
    returns it. Shuffling is seeded from the model seed and the number of
    earlier training calls, so identical model state plus identical data
    yields identical weights.
    """
    config = config or TrainConfig()
    x = _as_batch(model, chunk)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty chunk")

    rng = np.random.default_rng([model.seed, model.train_calls])
    params = [p for layer in model.layers for p in (layer.weights, layer.bias)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    n = x.shape[0]
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = x[order[start:start + config.batch_size]]
            loss, grads = loss_and_gradients(model, batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            step += 1
            corr1 = 1.0 - b1**step
            corr2 = 1.0 - b2**step
            flat = [g for pair in grads for g in pair]
            for p, g, mi, vi in zip(params, flat, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * g * g
                p -= lr * (mi / corr1) / (np.sqrt(vi / corr2) + eps)
    if not model.all_finite():
        raise TrainingDivergedError("weights became non-finite")
    model.train_calls += 1
    return model


def clone_model(model: Autoencoder) -> Autoencoder:
    return copy.deepcopy(model)


def model_to_dict(model: Autoencoder) -> dict:
    return {
        "format": MODEL_FORMAT,
        "input_dim": model.input_dim,
        "seed": model.seed,
        "train_calls": model.train_calls,
        "widths": model.widths,
        "layers": [
            {
                "activation": layer.activation,
                "weights": layer.weights.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in model.layers
        ],
    }


def model_from_dict(data: dict) -> Autoencoder:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {data.get('format')!r}, expected {MODEL_FORMAT!r}")
    widths = data["widths"]
    layers = []
    for (fan_in, fan_out), spec in zip(zip(widths, widths[1:]), data["layers"]):
        w = np.asarray(spec["weights"], dtype=float).reshape(fan_in, fan_out)
        layers.append(Layer(w, np.asarray(spec["bias"], dtype=float), spec["activation"]))
    return Autoencoder(layers, data["input_dim"], data["seed"], data.get("train_calls", 0))


def save_model(model: Autoencoder, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> Autoencoder:
    return model_from_dict(json.loads(Path(path).read_text()))
