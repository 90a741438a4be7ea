import math

import numpy as np
import pytest

from mccda import autodiff as ad
from mccda.confusion import mcc_loss
from mccda.errors import DimensionError, ParameterError
from mccda.nn import (
    Layer,
    ModelParams,
    OptState,
    grad_reverse,
    grl_coeff,
    init_params,
    load_params,
    mlp_forward,
    mlp_spec,
    save_params,
    sgd_step,
)


def naive_forward(params, x):
    h = x
    for layer in params.layers:
        out = np.zeros((h.shape[0], layer.weight.shape[1]))
        for i in range(h.shape[0]):
            for j in range(layer.weight.shape[1]):
                s = layer.bias[0, j]
                for p in range(h.shape[1]):
                    s += h[i, p] * layer.weight[p, j]
                if layer.activation == "relu":
                    s = max(s, 0.0)
                elif layer.activation == "tanh":
                    s = math.tanh(s)
                out[i, j] = s
        h = out
    return h


class TestInit:
    def test_deterministic(self):
        a = init_params(mlp_spec(2, [8], 2), 7).arrays()
        b = init_params(mlp_spec(2, [8], 2), 7).arrays()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_zero_biases(self):
        p = init_params(mlp_spec(3, [5, 4], 2), 0)
        assert all(np.all(l.bias == 0) for l in p.layers)

    def test_glorot_bound(self):
        for seed in range(1000):
            p = init_params([(4, 6, "relu")], seed)
            assert np.max(np.abs(p.layers[0].weight)) <= math.sqrt(6 / 10)

    def test_spec_must_chain(self):
        with pytest.raises(DimensionError):
            init_params([(2, 4, "relu"), (5, 2, "none")], 0)

    def test_bad_activation(self):
        with pytest.raises(ParameterError):
            ModelParams([Layer(np.ones((2, 2)), np.zeros((1, 2)), "gelu")])


class TestForward:
    def test_identity_layer(self):
        p = ModelParams([Layer(np.eye(3), np.zeros((1, 3)), "none")])
        x = np.random.default_rng(0).normal(size=(5, 3))
        feats, logits = mlp_forward(p, x)
        assert np.array_equal(logits, x) and np.array_equal(feats, x)

    def test_zero_final_layer(self):
        p = init_params(mlp_spec(2, [4], 3), 0)
        p.layers[-1].weight[:] = 0
        _, logits = mlp_forward(p, np.ones((2, 2)))
        assert np.all(logits == 0)
        assert np.allclose(ad.softmax_rows(logits), 1 / 3)

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_matches_naive(self, act):
        p = init_params(mlp_spec(3, [5, 4], 2, act), 3)
        x = np.random.default_rng(1).normal(size=(6, 3))
        _, logits = mlp_forward(p, x)
        assert np.max(np.abs(logits - naive_forward(p, x))) <= 1e-12

    def test_features_are_last_hidden(self):
        p = init_params(mlp_spec(2, [4, 3], 2), 0)
        x = np.ones((1, 2))
        feats, logits = mlp_forward(p, x)
        assert feats.shape == (1, 3)
        assert np.allclose(logits, feats @ p.layers[-1].weight + p.layers[-1].bias)

    def test_input_width_checked(self):
        with pytest.raises(DimensionError):
            mlp_forward(init_params(mlp_spec(2, [4], 2), 0), np.ones((3, 5)))

    def test_mlp_mcc_gradients(self):
        rng = np.random.default_rng(5)
        p = init_params(mlp_spec(2, [6], 3, "tanh"), 5)
        x = rng.normal(size=(8, 2))

        def loss(arrays):
            return mcc_loss(mlp_forward(p.with_arrays(arrays), x)[1], 2.5)[0]

        tape = ad.Tape()
        bound = p.bind(tape)
        grads = tape.backward(mcc_loss(mlp_forward(bound, x)[1], 2.5)[0])
        fd = ad.finite_diff_grad(loss, p.arrays())
        for v, f in zip(bound.vars(), fd):
            assert ad.relative_error(ad.grad_of(grads, v), f) <= 1e-4


class TestGradReverse:
    def test_forward_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 2))
        assert np.array_equal(grad_reverse(x, 0.7), x)

    def test_zero_coeff_zero_gradient(self):
        tape = ad.Tape()
        v = tape.leaf(np.ones((2, 2)))
        g = ad.grad_of(tape.backward(ad.reduce_sum(grad_reverse(v, 0.0))), v)
        assert np.all(g == 0)

    def test_unit_coeff_negates(self):
        tape = ad.Tape()
        v = tape.leaf(np.ones((2, 3)))
        g = ad.grad_of(tape.backward(ad.reduce_sum(grad_reverse(v, 1.0))), v)
        assert np.all(g == -1)

    @pytest.mark.parametrize("seed", range(10))
    def test_negated_scaled_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p = init_params(mlp_spec(2, [5], 2), seed)
        head = init_params(mlp_spec(2, [3], 1, "tanh"), seed + 100)
        x, c = rng.normal(size=(4, 2)), float(rng.uniform(0.1, 2))

        def grads(reverse):
            tape = ad.Tape()
            bound = p.bind(tape)
            _, out = mlp_forward(bound, x)
            if reverse:
                out = grad_reverse(out, c)
            _, y = mlp_forward(head, out)
            g = tape.backward(ad.reduce_sum(y))
            return [ad.grad_of(g, v) for v in bound.vars()]

        for a, b in zip(grads(True), grads(False)):
            assert np.allclose(a, -c * b, atol=1e-14)

    def test_coeff_schedule(self):
        assert grl_coeff(0.0) == 0.0
        assert grl_coeff(1.0) == pytest.approx(2 / (1 + math.exp(-10)) - 1)
        vals = [grl_coeff(p) for p in np.linspace(0, 1, 11)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestSGD:
    def test_plain_step(self):
        params = [np.ones((2, 2))]
        state = OptState.for_params(params, 0.1, 0.0)
        (new,) = sgd_step(params, [np.ones((2, 2))], state)
        assert np.allclose(new, 0.9)

    def test_zero_gradient_noop(self):
        params = [np.arange(4.0).reshape(2, 2)]
        state = OptState.for_params(params, 0.1, 0.9)
        (new,) = sgd_step(params, [np.zeros((2, 2))], state)
        assert np.array_equal(new, params[0])

    def test_momentum_recurrence(self):
        theta, v = 1.0, 0.0
        expected = []
        for g in (0.5, -0.25):
            v = 0.9 * v + g
            theta = theta - 0.05 * v
            expected.append(theta)
        params = [np.array([[1.0]])]
        state = OptState.for_params(params, 0.05, 0.9)
        got = []
        for g in (0.5, -0.25):
            params = sgd_step(params, [np.array([[g]])], state)
            got.append(params[0][0, 0])
        assert np.max(np.abs(np.array(got) - expected)) <= 1e-12

    def test_quadratic_decreases(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 4))
        q = a @ a.T + np.eye(4)
        x = rng.normal(size=(4, 1))
        state = OptState.for_params([x], 1e-3, 0.9)
        f = lambda y: float((y.T @ q @ y)[0, 0])
        (x2,) = sgd_step([x], [2 * q @ x], state)
        assert f(x2) < f(x)

    def test_validation(self):
        with pytest.raises(ParameterError):
            OptState.for_params([np.ones((1, 1))], -0.1, 0.9)
        with pytest.raises(ParameterError):
            OptState.for_params([np.ones((1, 1))], 0.1, 1.0)
        state = OptState.for_params([np.ones((1, 1))], 0.1, 0.9)
        with pytest.raises(DimensionError):
            sgd_step([np.ones((1, 1))], [np.ones((2, 1))], state)


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(mlp_spec(2, [4], 3, "tanh"), 9)
    path = save_params(p, tmp_path / "m.json")
    q = load_params(path)
    assert [l.activation for l in q.layers] == [l.activation for l in p.layers]
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
