"""Dense classification head: forward pass, inverted dropout and backprop.

Parameters are plain float64 numpy arrays. ``ClassifierParams.tensors()``
exposes them by name (``dense0.weights``, ``dense0.bias``, ...) and the
gradients returned by ``loss_and_grads`` use the same names, so optimizers
can update the arrays in place.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ...core.config import CLASS_NAMES
from ...core.errors import DimensionError, NumericError, ParameterError
from ...core.utils import substream

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "softmax", "none")
LOG_CLAMP = 1e-12
# 7 x 7 x 512 pretrained feature map, flattened
PRETRAINED_FEATURE_DIM = 25088


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"dense layer weights {self.weights.shape} do not match bias {self.bias.shape}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError("dense layer holds non-finite parameters")

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[1])


def he_normal(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ClassifierParams:
    """Stack of dense layers: ReLU hidden layers and a softmax output."""

    layers: list[DenseLayer]
    dropout_rate: float = 0.5
    rng_seed: int = 0
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not self.layers:
            raise DimensionError("a classifier needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
            if prev.activation == "softmax":
                raise ParameterError("softmax is only allowed on the output layer")
        if self.layers[-1].activation != "softmax":
            raise ParameterError("the output layer must use softmax")
        if self.layers[-1].out_dim != len(self.class_names):
            raise DimensionError(
                f"output width {self.layers[-1].out_dim} != {len(self.class_names)} class names"
            )

    @classmethod
    def initialize(
        cls,
        input_dim: int = PRETRAINED_FEATURE_DIM,
        hidden: Sequence[int] = (512, 64),
        dropout_rate: float = 0.5,
        seed: int = 0,
        class_names: Sequence[str] = CLASS_NAMES,
    ) -> "ClassifierParams":
        """He-normal weights for ReLU layers, Glorot-uniform for the softmax layer, zero biases."""
        rng = substream(seed, "init")
        dims = [int(input_dim), *(int(h) for h in hidden), len(class_names)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            init = glorot_uniform if last else he_normal
            layers.append(
                DenseLayer(init(fan_in, fan_out, rng), np.zeros(fan_out), "softmax" if last else "relu")
            )
        return cls(layers=layers, dropout_rate=dropout_rate, rng_seed=seed, class_names=list(class_names))

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim, *(layer.out_dim for layer in self.layers)]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def tensors(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array, keyed by name."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"dense{i}.weights"] = layer.weights
            out[f"dense{i}.bias"] = layer.bias
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.tensors().items():
            arr[...] = tensors[name]

    def copy(self) -> "ClassifierParams":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.tensors().values()))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(z)
    if activation == "softmax":
        return softmax(z)
    return z


def draw_masks(params: ClassifierParams, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks, one per hidden layer, drawn in layer order.

    Kept units carry ``1 / (1 - p)`` so eval mode needs no rescaling.
    """
    p = params.dropout_rate
    masks = []
    for layer in params.layers[:-1]:
        keep = rng.random((batch, layer.out_dim)) >= p
        masks.append(keep / (1.0 - p))
    return masks


def _check_features(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"expected features of shape (batch, {params.input_dim}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("features contain non-finite values")
    return x


def _resolve_masks(params, batch, mode, rng, masks):
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or params.dropout_rate == 0.0:
        return None
    if masks is not None:
        return masks
    if rng is None:
        raise ParameterError("train mode with dropout needs a random generator or explicit masks")
    return draw_masks(params, batch, rng)


@dataclass
class _Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def propagate(
    params: ClassifierParams,
    a: np.ndarray,
    masks: list[np.ndarray] | None,
    start: int = 0,
    cache: _Cache | None = None,
) -> np.ndarray:
    """Run layers ``start..`` on ``a``, the activation entering layer ``start``.

    Dropout mask ``i - 1`` is applied to the input of every layer ``i >= 1``,
    i.e. right after each hidden ReLU.
    """
    for i in range(start, len(params.layers)):
        layer = params.layers[i]
        if i > 0 and masks is not None:
            a = a * masks[i - 1]
        z = a @ layer.weights + layer.bias
        if cache is not None:
            cache.inputs.append(a)
            cache.pre.append(z)
        a = _activate(z, layer.activation)
    return a


def first_hidden(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    """Activation of layer 0 before dropout; independent of the mask draw."""
    x = _check_features(params, features)
    layer = params.layers[0]
    return _activate(x @ layer.weights + layer.bias, layer.activation)


def forward(
    params: ClassifierParams,
    features: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Class probabilities, one softmax row per feature vector."""
    x = _check_features(params, features)
    masks = _resolve_masks(params, len(x), mode, rng, masks)
    return propagate(params, x, masks)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.mean(np.sum(targets * np.log(np.clip(probs, LOG_CLAMP, None)), axis=1)))


def loss_and_grads(
    params: ClassifierParams,
    features: np.ndarray,
    targets: np.ndarray,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    masks: list[np.ndarray] | None = None,
    return_input_grad: bool = False,
):
    """Mean cross-entropy and its gradient for every weight and bias.

    The dropout masks used in the forward pass are reused in the backward
    pass. With ``return_input_grad`` the gradient with respect to
    ``features`` is returned as a third element.
    """
    x = _check_features(params, features)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(x), params.layers[-1].out_dim):
        raise DimensionError(f"targets must be one-hot of shape {(len(x), params.layers[-1].out_dim)}")
    masks = _resolve_masks(params, len(x), mode, rng, masks)

    cache = _Cache()
    probs = propagate(params, x, masks, cache=cache)
    loss = cross_entropy(probs, targets)

    grads: dict[str, np.ndarray] = {}
    delta = (probs - targets) / len(x)
    dx = None
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        grads[f"dense{i}.weights"] = cache.inputs[i].T @ delta
        grads[f"dense{i}.bias"] = delta.sum(axis=0)
        da = delta @ layer.weights.T
        if i == 0:
            dx = da
            break
        if masks is not None:
            da = da * masks[i - 1]
        prev = params.layers[i - 1]
        delta = da * (cache.pre[i - 1] > 0) if prev.activation == "relu" else da

    if return_input_grad:
        return loss, grads, dx
    return loss, grads


def predict_proba(params: ClassifierParams, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities computed in chunks of ``batch_size`` rows."""
    x = np.asarray(features)
    if len(x) == 0:
        return np.zeros((0, params.layers[-1].out_dim))
    return np.concatenate(
        [forward(params, x[i:i + batch_size], mode="eval") for i in range(0, len(x), batch_size)]
    )
