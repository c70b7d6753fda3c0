import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import softmax

from algorithm.netcore import (
    Layer,
    LayerSpec,
    ModelParams,
    Sample,
    TrainConfig,
    accuracy,
    class_score_grad,
    class_score_jacobian,
    cross_entropy,
    forward,
    forward_batch,
    init_params,
    is_bias_free,
    loss_grad_input,
    mlp_specs,
    predict,
    predict_batch,
    train,
)
from core.errors import ConfigurationError, InputError
from tests.conftest import linear_model

H = 1e-4


def _random_model(rng: np.random.Generator) -> ModelParams:
    D, hidden, N = int(rng.integers(3, 9)), int(rng.integers(4, 9)), int(rng.integers(2, 6))
    params = init_params(mlp_specs(D, [hidden], N), seed=int(rng.integers(1 << 30)))
    layers = tuple(
        Layer(spec=layer.spec, weight=layer.weight, bias=rng.normal(0.0, 0.3, layer.spec.out_dim))
        for layer in params.layers
    )
    return ModelParams(layers=layers, seed=params.seed)


def _min_relu_margin(params: ModelParams, x: np.ndarray) -> float:
    activation, margin = x, np.inf
    for layer in params.layers:
        pre = layer.weight @ activation + layer.bias
        if layer.spec.activation == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
            pre = np.maximum(pre, 0.0)
        activation = pre
    return margin


def _central_difference(fn, x: np.ndarray) -> np.ndarray:
    grad = np.empty_like(x)
    for j in range(x.shape[0]):
        step = np.zeros_like(x)
        step[j] = H
        grad[j] = (fn(x + step) - fn(x - step)) / (2.0 * H)
    return grad


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _gradient_cases(n: int, seed: int):
    """(model, x) pairs whose ReLU pre-activations stay clear of the kink."""
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < n:
        params = _random_model(rng)
        x = rng.uniform(0.0, 1.0, params.input_dim)
        if _min_relu_margin(params, x) < 1e-3:
            continue
        produced += 1
        yield params, x


# ── construction ───────────────────────────────────────────────────────────

def test_init_is_deterministic():
    specs = [LayerSpec(4, 3, "relu"), LayerSpec(3, 2, "identity")]
    a, b = init_params(specs, seed=7), init_params(specs, seed=7)
    for la, lb in zip(a.layers, b.layers):
        assert la.weight.tobytes() == lb.weight.tobytes()
        assert la.bias.tobytes() == lb.bias.tobytes()


def test_init_rejects_chain_break():
    with pytest.raises(ConfigurationError):
        init_params([LayerSpec(4, 3, "relu"), LayerSpec(5, 2, "identity")], seed=0)


def test_init_biases_are_zero():
    params = init_params([LayerSpec(2, 2, "identity")], seed=0)
    assert params.layers[0].bias.tolist() == [0.0, 0.0]
    assert is_bias_free(params)


def test_head_must_be_identity():
    with pytest.raises(ConfigurationError):
        init_params([LayerSpec(2, 2, "relu")], seed=0)


def test_params_are_read_only():
    params = init_params(mlp_specs(3, [4], 2), seed=1)
    with pytest.raises(ValueError):
        params.layers[0].weight[0, 0] = 1.0


def test_sample_rejects_out_of_range_pixels():
    with pytest.raises(InputError):
        Sample(pixels=np.array([0.5, 1.5]))


# ── forward / predict ──────────────────────────────────────────────────────

def test_forward_identity_map():
    z = forward(linear_model(np.eye(2)), Sample(pixels=np.array([0.3, 0.7])))
    np.testing.assert_allclose(z, [0.3, 0.7])


def test_forward_hand_multiply():
    z = forward(linear_model([[1.0, 1.0], [-1.0, -1.0]]), Sample(pixels=np.array([0.5, 0.5])))
    np.testing.assert_allclose(z, [1.0, -1.0])


def test_forward_wrong_length():
    with pytest.raises(InputError):
        forward(linear_model(np.eye(2)), Sample(pixels=np.array([0.1, 0.2, 0.3])))


def test_forward_batch_matches_forward():
    params = init_params(mlp_specs(5, [7], 3), seed=2)
    X = np.random.default_rng(0).uniform(size=(6, 5))
    batch = forward_batch(params, X)
    for row, x in zip(batch, X):
        np.testing.assert_allclose(row, forward(params, x), rtol=0, atol=1e-12)


def test_predict_argmax_and_ties():
    assert predict(linear_model(np.eye(3)), np.array([0.1, 2.0, -1.0])) == 1
    assert predict(linear_model(np.eye(2)), np.array([1.0, 1.0])) == 0


@given(k=st.floats(min_value=1.01, max_value=50.0))
def test_predict_invariant_to_input_scaling(k):
    params = linear_model([[0.4, -0.2, 0.1], [-0.3, 0.5, 0.2], [0.1, 0.1, -0.6]])
    x = np.array([0.2, 0.6, 0.3])
    assert predict(params, k * x) == predict(params, x)


@given(k=st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=50, deadline=None)
def test_bias_free_network_is_positively_homogeneous(k):
    params = init_params(mlp_specs(6, [8, 5], 4), seed=3)
    x = np.random.default_rng(4).uniform(size=6)
    np.testing.assert_allclose(forward(params, k * x), k * forward(params, x), rtol=1e-9, atol=1e-12)


def test_predict_batch_and_accuracy(blob_model, blob_data):
    X = np.stack([s.pixels for s in blob_data])
    assert predict_batch(blob_model, X).tolist() == [predict(blob_model, s) for s in blob_data]
    assert accuracy(blob_model, blob_data) == pytest.approx(
        np.mean([predict(blob_model, s) == s.label for s in blob_data])
    )


# ── gradients ──────────────────────────────────────────────────────────────

def test_loss_grad_closed_form():
    grad = loss_grad_input(linear_model(np.eye(2)), Sample(pixels=np.zeros(2)), label=0)
    np.testing.assert_allclose(grad, [-0.5, 0.5])


def test_loss_grad_matches_finite_differences():
    worst = 0.0
    for params, x in _gradient_cases(100, seed=20):
        label = int(np.argmin(forward(params, x)))
        numeric = _central_difference(lambda v: cross_entropy(params, v, label), x)
        worst = max(worst, _relative_error(loss_grad_input(params, x, label), numeric))
    assert worst < 1e-4


def test_class_score_grad_matches_finite_differences():
    worst = 0.0
    for params, x in _gradient_cases(100, seed=21):
        for i in range(params.n_classes):
            numeric = _central_difference(lambda v: forward(params, v)[i], x)
            worst = max(worst, _relative_error(class_score_grad(params, x, i), numeric))
    assert worst < 1e-4


def test_dead_relu_blocks_gradient():
    hidden = Layer(LayerSpec(2, 2, "relu"), weight=-np.eye(2), bias=-np.ones(2))
    head = Layer(LayerSpec(2, 2, "identity"), weight=np.eye(2), bias=np.zeros(2))
    params = ModelParams(layers=(hidden, head), seed=0)
    x = Sample(pixels=np.array([0.5, 0.5]))
    assert not np.any(loss_grad_input(params, x, 1))
    assert not np.any(class_score_jacobian(params, x))


def test_class_score_grad_of_linear_model_is_weight_row():
    W = np.array([[0.3, -1.0, 2.0], [0.5, 0.25, -0.75]])
    for i in range(2):
        np.testing.assert_array_equal(class_score_grad(linear_model(W), np.array([0.1, 0.2, 0.3]), i), W[i])


def test_chain_rule_identity():
    for params, x in _gradient_cases(10, seed=22):
        label = 0
        weights = softmax(forward(params, x))
        weights[label] -= 1.0
        combined = weights @ class_score_jacobian(params, x)
        np.testing.assert_allclose(combined, loss_grad_input(params, x, label), rtol=1e-10, atol=1e-12)


def test_class_index_out_of_range():
    with pytest.raises(InputError):
        class_score_grad(linear_model(np.eye(2)), np.zeros(2), 2)


# ── training ───────────────────────────────────────────────────────────────

def test_train_fits_separable_blobs(blob_model, blob_data):
    assert accuracy(blob_model, blob_data) >= 0.99


def test_train_is_deterministic(blob_data):
    cfg = TrainConfig(learning_rate=0.1, epochs=2, batch_size=8, seed=9)
    a = train(init_params(mlp_specs(2, [6], 2), seed=1), blob_data, cfg)
    b = train(init_params(mlp_specs(2, [6], 2), seed=1), blob_data, cfg)
    for la, lb in zip(a.layers, b.layers):
        assert la.weight.tobytes() == lb.weight.tobytes()
        assert la.bias.tobytes() == lb.bias.tobytes()


def test_train_rejects_zero_epochs():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)


def test_train_rejects_unlabelled(blob_data):
    data = [*blob_data[:4], Sample(pixels=np.array([0.5, 0.5]))]
    with pytest.raises(InputError):
        train(init_params(mlp_specs(2, [4], 2), seed=0), data, TrainConfig(epochs=1))


def test_train_without_bias_keeps_biases_zero(bias_free_blob_model, blob_data):
    assert is_bias_free(bias_free_blob_model)
    assert accuracy(bias_free_blob_model, blob_data) >= 0.95
