from collections.abc import Callable, Sequence

import numpy as np
import numpy.typing as npt
import pytest

from algorithm.netcore import (
    Layer,
    LayerSpec,
    ModelParams,
    Sample,
    TrainConfig,
    init_params,
    mlp_specs,
    train,
)


def linear_model(weight: npt.ArrayLike, bias: npt.ArrayLike | None = None) -> ModelParams:
    """Single identity layer z = W x + b."""
    W = np.asarray(weight, dtype=np.float64)
    b = np.zeros(W.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    spec = LayerSpec(in_dim=W.shape[1], out_dim=W.shape[0], activation="identity")
    return ModelParams(layers=(Layer(spec=spec, weight=W, bias=b),), seed=0)


def two_blobs(n_per_class: int, spread: float, seed: int) -> list[Sample]:
    """Two classes around (0.2, 0.8) and (0.8, 0.2); separable by x0 = x1."""
    rng = np.random.default_rng(seed)
    means = np.array([[0.2, 0.8], [0.8, 0.2]])
    samples = []
    for i in range(n_per_class):
        for label in (0, 1):
            point = np.clip(means[label] + rng.normal(0.0, spread, size=2), 0.0, 1.0)
            samples.append(Sample(pixels=point, label=label))
    return samples


@pytest.fixture
def make_linear() -> Callable[..., ModelParams]:
    return linear_model


@pytest.fixture(scope="session")
def blob_data() -> list[Sample]:
    return two_blobs(n_per_class=100, spread=0.05, seed=3)


@pytest.fixture(scope="session")
def blob_model(blob_data: Sequence[Sample]) -> ModelParams:
    params = init_params(mlp_specs(2, [16], 2), seed=11)
    return train(params, blob_data, TrainConfig(learning_rate=0.5, epochs=20, batch_size=16, seed=11))


@pytest.fixture(scope="session")
def bias_free_blob_model(blob_data: Sequence[Sample]) -> ModelParams:
    params = init_params(mlp_specs(2, [16], 2), seed=5)
    cfg = TrainConfig(learning_rate=0.5, epochs=20, batch_size=16, seed=5, use_bias=False)
    return train(params, blob_data, cfg)
