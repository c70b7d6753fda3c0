"""
Feedforward classifier core
===========================
Dense ReLU network mapping a flattened image X (length D) to the pre-softmax
vector z (length N), with exact reverse-mode input gradients and plain
mini-batch SGD training.

All arithmetic is 64-bit. Parameters are immutable: arrays are stored
read-only and every update returns a new ModelParams.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax

from core.errors import ConfigurationError, InputError
from core.logging import get_logger

logger = get_logger(__name__)

Activation = Literal["relu", "identity"]
FeatureVector = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]


# ─────────────────────────────────────────────────────────────────────────────
# Types
# ─────────────────────────────────────────────────────────────────────────────

def _frozen(array: npt.ArrayLike) -> npt.NDArray[np.float64]:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Sample:
    pixels: Vector
    label: int | None = None

    def __post_init__(self) -> None:
        pixels = _frozen(self.pixels)
        if pixels.ndim != 1:
            raise InputError(f"sample pixels must be a vector, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise InputError("sample pixels must lie in [0, 1]")
        if self.label is not None and self.label < 0:
            raise InputError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def dim(self) -> int:
        return int(self.pixels.shape[0])

    def with_pixels(self, pixels: npt.ArrayLike) -> Sample:
        return Sample(pixels=np.asarray(pixels, dtype=np.float64), label=self.label)


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = "relu"

    def __post_init__(self) -> None:
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigurationError(f"layer dims must be positive: {self.in_dim}->{self.out_dim}")
        if self.activation not in ("relu", "identity"):
            raise ConfigurationError(f"unknown activation: {self.activation}")


@dataclass(frozen=True)
class Layer:
    spec: LayerSpec
    weight: npt.NDArray[np.float64]
    bias: Vector

    def __post_init__(self) -> None:
        weight = _frozen(self.weight)
        bias = _frozen(self.bias)
        if weight.shape != (self.spec.out_dim, self.spec.in_dim):
            raise ConfigurationError(
                f"weight shape {weight.shape} does not match "
                f"{self.spec.out_dim}x{self.spec.in_dim}"
            )
        if bias.shape != (self.spec.out_dim,):
            raise ConfigurationError(f"bias shape {bias.shape} does not match {self.spec.out_dim}")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise ConfigurationError("weights and biases must be finite")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class ModelParams:
    layers: tuple[Layer, ...]
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_chain([layer.spec for layer in self.layers])

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].spec.out_dim


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    use_bias: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class _Trace:
    """Per-layer inputs and pre-activations recorded by a forward pass."""

    inputs: list[npt.NDArray[np.float64]] = field(default_factory=list)
    pre_activations: list[npt.NDArray[np.float64]] = field(default_factory=list)


# ─────────────────────────────────────────────────────────────────────────────
# Construction
# ─────────────────────────────────────────────────────────────────────────────

def validate_chain(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigurationError("network needs at least one layer")
    for index in range(len(specs) - 1):
        if specs[index].out_dim != specs[index + 1].in_dim:
            raise ConfigurationError(
                f"layer {index} out_dim {specs[index].out_dim} != "
                f"layer {index + 1} in_dim {specs[index + 1].in_dim}"
            )
    if specs[-1].activation != "identity":
        raise ConfigurationError("final layer must use the identity activation (it produces z)")


def mlp_specs(input_dim: int, hidden: Sequence[int], n_classes: int) -> list[LayerSpec]:
    """D -> hidden... -> N with ReLU on hidden layers and an identity head."""
    dims = [input_dim, *hidden, n_classes]
    specs = [LayerSpec(dims[k], dims[k + 1], "relu") for k in range(len(dims) - 2)]
    specs.append(LayerSpec(dims[-2], dims[-1], "identity"))
    return specs


def init_params(layers: Sequence[LayerSpec], seed: int) -> ModelParams:
    validate_chain(layers)
    rng = np.random.default_rng(seed)
    built = []
    for spec in layers:
        weight = rng.standard_normal((spec.out_dim, spec.in_dim)) / np.sqrt(spec.in_dim)
        built.append(Layer(spec=spec, weight=weight, bias=np.zeros(spec.out_dim)))
    return ModelParams(layers=tuple(built), seed=seed)


def is_bias_free(params: ModelParams) -> bool:
    return all(not np.any(layer.bias) for layer in params.layers)


# ─────────────────────────────────────────────────────────────────────────────
# Forward
# ─────────────────────────────────────────────────────────────────────────────

def _as_input(params: ModelParams, x: Sample | npt.ArrayLike) -> Vector:
    pixels = x.pixels if isinstance(x, Sample) else np.asarray(x, dtype=np.float64)
    if pixels.ndim != 1 or pixels.shape[0] != params.input_dim:
        raise InputError(
            f"input length {pixels.shape[-1] if pixels.ndim else 0} != model input dim {params.input_dim}"
        )
    if not np.all(np.isfinite(pixels)):
        raise InputError("input contains non-finite values")
    return pixels


def _as_batch(params: ModelParams, X: npt.ArrayLike) -> npt.NDArray[np.float64]:
    batch = np.asarray(X, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise InputError(f"batch shape {batch.shape} incompatible with input dim {params.input_dim}")
    return batch


def _forward_trace(params: ModelParams, batch: npt.NDArray[np.float64]) -> tuple[npt.NDArray[np.float64], _Trace]:
    trace = _Trace()
    activation = batch
    for layer in params.layers:
        trace.inputs.append(activation)
        pre = activation @ layer.weight.T + layer.bias
        trace.pre_activations.append(pre)
        activation = np.maximum(pre, 0.0) if layer.spec.activation == "relu" else pre
    return activation, trace


def forward(params: ModelParams, x: Sample | npt.ArrayLike) -> FeatureVector:
    """Pre-softmax vector z. Raw arrays are accepted so scaled inputs (k·x) can be fed."""
    pixels = _as_input(params, x)
    z, _ = _forward_trace(params, pixels[np.newaxis, :])
    return z[0]


def forward_batch(params: ModelParams, X: npt.ArrayLike) -> npt.NDArray[np.float64]:
    z, _ = _forward_trace(params, _as_batch(params, X))
    return z


def predict(params: ModelParams, x: Sample | npt.ArrayLike) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index.
    return int(np.argmax(forward(params, x)))


def predict_batch(params: ModelParams, X: npt.ArrayLike) -> npt.NDArray[np.int64]:
    return np.argmax(forward_batch(params, X), axis=1)


def accuracy(params: ModelParams, samples: Sequence[Sample]) -> float:
    labelled = [s for s in samples if s.label is not None]
    if not labelled:
        raise InputError("accuracy needs labelled samples")
    X = np.stack([s.pixels for s in labelled])
    y = np.array([s.label for s in labelled])
    return float(np.mean(predict_batch(params, X) == y))


def cross_entropy(params: ModelParams, x: Sample | npt.ArrayLike, label: int) -> float:
    z = forward(params, x)
    _check_class(params, label)
    return float(-log_softmax(z)[label])


# ─────────────────────────────────────────────────────────────────────────────
# Reverse mode
# ─────────────────────────────────────────────────────────────────────────────

def _check_class(params: ModelParams, index: int) -> None:
    if not 0 <= index < params.n_classes:
        raise InputError(f"class index {index} outside [0, {params.n_classes})")


def _backprop_input(params: ModelParams, trace: _Trace, upstream: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Pull ``upstream`` (rows of dL/dz) back to dL/dx, one row per upstream row."""
    grad = upstream
    for layer, pre in zip(reversed(params.layers), reversed(trace.pre_activations)):
        if layer.spec.activation == "relu":
            grad = grad * (pre > 0.0)
        grad = grad @ layer.weight
    return grad


def loss_grad_input(params: ModelParams, x: Sample | npt.ArrayLike, label: int) -> Vector:
    """d/dx of cross_entropy(softmax(z), label)."""
    pixels = _as_input(params, x)
    _check_class(params, label)
    z, trace = _forward_trace(params, pixels[np.newaxis, :])
    upstream = softmax(z, axis=1)
    upstream[0, label] -= 1.0
    return _backprop_input(params, trace, upstream)[0]


def class_score_grad(params: ModelParams, x: Sample | npt.ArrayLike, i: int) -> Vector:
    _check_class(params, i)
    return class_score_jacobian(params, x)[i]


def class_score_jacobian(params: ModelParams, x: Sample | npt.ArrayLike) -> npt.NDArray[np.float64]:
    """(N, D) matrix whose row i is dz_i/dx."""
    pixels = _as_input(params, x)
    _, trace = _forward_trace(params, pixels[np.newaxis, :])
    # One ReLU mask row broadcasts across all N upstream rows.
    return _backprop_input(params, trace, np.eye(params.n_classes))


# ─────────────────────────────────────────────────────────────────────────────
# Training
# ─────────────────────────────────────────────────────────────────────────────

def _batch_gradients(
    params: ModelParams,
    X: npt.NDArray[np.float64],
    y: npt.NDArray[np.int64],
) -> tuple[float, list[tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]]]:
    z, trace = _forward_trace(params, X)
    n = X.shape[0]
    loss = float(-np.mean(log_softmax(z, axis=1)[np.arange(n), y]))
    delta = softmax(z, axis=1)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads: list[tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]] = []
    for index in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[index]
        if layer.spec.activation == "relu":
            delta = delta * (trace.pre_activations[index] > 0.0)
        grads.append((delta.T @ trace.inputs[index], delta.sum(axis=0)))
        delta = delta @ layer.weight
    grads.reverse()
    return loss, grads


def train(params: ModelParams, data: Sequence[Sample], cfg: TrainConfig) -> ModelParams:
    if not data:
        raise InputError("training data is empty")
    for index, sample in enumerate(data):
        if sample.label is None:
            raise InputError(f"sample {index} is unlabelled")
        if sample.dim != params.input_dim:
            raise InputError(f"sample {index} has length {sample.dim}, expected {params.input_dim}")
        _check_class(params, sample.label)

    X = np.stack([s.pixels for s in data])
    y = np.array([s.label for s in data], dtype=np.int64)
    weights = [np.array(layer.weight) for layer in params.layers]
    biases = [np.array(layer.bias) for layer in params.layers]
    rng = np.random.default_rng(cfg.seed)

    current = params
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = _batch_gradients(current, X[batch], y[batch])
            epoch_loss += loss * len(batch)
            for k, (grad_w, grad_b) in enumerate(grads):
                weights[k] -= cfg.learning_rate * grad_w
                if cfg.use_bias:
                    biases[k] -= cfg.learning_rate * grad_b
            current = _rebuild(params, weights, biases)
        logger.debug("epoch %d/%d  loss=%.6f", epoch + 1, cfg.epochs, epoch_loss / len(data))

    logger.info("trained %d epochs on %d samples", cfg.epochs, len(data))
    return current


def _rebuild(
    template: ModelParams,
    weights: Sequence[npt.NDArray[np.float64]],
    biases: Sequence[npt.NDArray[np.float64]],
) -> ModelParams:
    layers = tuple(
        Layer(spec=layer.spec, weight=w, bias=b)
        for layer, w, b in zip(template.layers, weights, biases)
    )
    return ModelParams(layers=layers, seed=template.seed)
