import math

import numpy as np
import pytest

from guided_es.linalg import DimensionError
from guided_es.objectives import (
    DegenerateObjectiveError,
    MlpSpec,
    QuadraticSpec,
    flatten_params,
    init_params,
    linear_objective,
    mlp_accuracy,
    mlp_gradient,
    mlp_loss,
    mlp_objective,
    quadratic_objective,
    unflatten_params,
)


def naive_loss(spec, theta, x, y):
    """Per-sample loop with explicit softmax; independent of the vectorized code."""
    layers = unflatten_params(spec, theta)
    total = 0.0
    for xi, yi in zip(x, y):
        h = xi
        for j, (w, b) in enumerate(layers):
            h = [sum(h[r] * w[r, c] for r in range(len(h))) + b[c] for c in range(w.shape[1])]
            if j < len(layers) - 1:
                h = [math.tanh(v) for v in h]
        m = max(h)
        total += -(h[yi] - m - math.log(sum(math.exp(v - m) for v in h)))
    return total / len(y)


def test_linear_objective():
    f = linear_objective([1.0, -2.0, 0.5])
    assert f([2.0, 1.0, 4.0]) == 2.0
    np.testing.assert_array_equal(f.gradient(np.zeros(3)), [1.0, -2.0, 0.5])
    np.testing.assert_allclose(f.evaluate_many(np.eye(3)), [1.0, -2.0, 0.5])
    with pytest.raises(DegenerateObjectiveError):
        linear_objective([0.0, 0.0])
    with pytest.raises(DimensionError):
        f([1.0, 2.0])


def test_quadratic_objective_hessian_and_gradient():
    spec = QuadraticSpec([1.0, 2.0, 5.0, 10.0], rotation_seed=4, linear_term=[1.0, 0.0, -1.0, 2.0])
    h = spec.hessian()
    np.testing.assert_allclose(np.linalg.eigvalsh(h), [1.0, 2.0, 5.0, 10.0], atol=1e-12)
    f = quadratic_objective(spec)
    x = np.array([0.3, -1.0, 2.0, 0.5])
    assert f(x) == pytest.approx(0.5 * x @ h @ x + x @ [1.0, 0.0, -1.0, 2.0])
    eps = 1e-6
    fd = np.array([(f(x + eps * e) - f(x - eps * e)) / (2 * eps) for e in np.eye(4)])
    np.testing.assert_allclose(f.gradient(x), fd, atol=1e-7)
    rows = np.random.default_rng(0).standard_normal((70, 4))
    np.testing.assert_allclose(f.evaluate_many(rows), [f(r) for r in rows], rtol=1e-13)


def test_quadratic_rejects_bad_input():
    with pytest.raises(ValueError):
        quadratic_objective(QuadraticSpec([1.0, float("nan")]))
    with pytest.raises(DimensionError):
        quadratic_objective(QuadraticSpec([1.0, 2.0], linear_term=[1.0]))


def test_param_layout_roundtrip():
    spec = MlpSpec((3, 4, 2))
    assert spec.num_params == 3 * 4 + 4 + 4 * 2 + 2
    flat = np.arange(spec.num_params, dtype=float)
    layers = unflatten_params(spec, flat)
    # First layer's weights are row-major (fan_in, fan_out), followed by its bias.
    np.testing.assert_array_equal(layers[0][0][0], [0, 1, 2, 3])
    np.testing.assert_array_equal(layers[0][1], [12, 13, 14, 15])
    np.testing.assert_array_equal(flatten_params(spec, layers), flat)
    stacked = unflatten_params(spec, np.stack([flat, -flat]))
    np.testing.assert_array_equal(stacked[1][0][1], -layers[1][0])


def test_init_params_scale():
    spec = MlpSpec((16, 8, 3))
    layers = unflatten_params(spec, init_params(spec, 0))
    assert np.abs(layers[0][0]).max() <= 0.25 and np.abs(layers[1][0]).max() <= 1 / math.sqrt(8)
    assert not layers[0][1].any() and not layers[1][1].any()


def test_loss_matches_naive_oracle():
    rng = np.random.default_rng(1)
    spec = MlpSpec((5, 4, 3, 3))
    theta = rng.standard_normal(spec.num_params)
    x = rng.uniform(size=(6, 5))
    y = rng.integers(0, 3, 6)
    assert mlp_loss(spec, theta, x, y) == pytest.approx(naive_loss(spec, theta, x, y), rel=1e-12)


def test_loss_uniform_logits_is_log_classes():
    spec = MlpSpec((4, 10))
    x = np.random.default_rng(0).uniform(size=(5, 4))
    assert mlp_loss(spec, np.zeros(spec.num_params), x, np.arange(5)) == pytest.approx(math.log(10))


def test_loss_is_stable_for_large_logits():
    spec = MlpSpec((1, 2))
    theta = np.array([1000.0, -1000.0, 0.0, 0.0])
    assert mlp_loss(spec, theta, np.ones((1, 1)), np.array([0])) == pytest.approx(0.0, abs=1e-300)
    assert mlp_loss(spec, theta, np.ones((1, 1)), np.array([1])) == pytest.approx(2000.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    spec = MlpSpec((6, 5, 4))
    theta = rng.standard_normal(spec.num_params) * 0.5
    x, y = rng.uniform(size=(9, 6)), rng.integers(0, 4, 9)
    g = mlp_gradient(spec, theta, x, y)
    h = 1e-5
    fd = np.array([(mlp_loss(spec, theta + h * e, x, y) - mlp_loss(spec, theta - h * e, x, y)) / (2 * h)
                   for e in np.eye(spec.num_params)])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_mlp_objective_batches_and_validation():
    rng = np.random.default_rng(2)
    spec = MlpSpec((4, 3, 2))
    x, y = rng.uniform(size=(8, 4)), rng.integers(0, 2, 8)
    f = mlp_objective(spec, (x, y))
    thetas = rng.standard_normal((40, spec.num_params))
    many = f.evaluate_many(thetas)
    np.testing.assert_allclose(many, [f(t) for t in thetas], rtol=1e-14)
    # Row results do not depend on which rows share the stack.
    np.testing.assert_array_equal(f.evaluate_many(thetas[3:5]), many[3:5])
    with pytest.raises(DimensionError):
        mlp_objective(spec, (x[:, :3], y))
    with pytest.raises(DimensionError):
        mlp_objective(spec, (x, y[:-1]))
    with pytest.raises(DimensionError):
        mlp_objective(spec, (x, y + 2))


def test_accuracy():
    spec = MlpSpec((2, 2))
    theta = flatten_params(spec, [(np.eye(2), np.zeros(2))])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert mlp_accuracy(spec, theta, x, [0, 1, 1]) == pytest.approx(2 / 3)


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,))
    with pytest.raises(ValueError):
        MlpSpec((3, 0, 2))
