"""Network construction, initialization, forward passes, and gradients."""

import numpy as np
import pytest

from ntkflow.activations import builtin
from ntkflow.datasets import Dataset, gen_synthetic, knn_graph
from ntkflow.networks import (LayerSpec, NonFiniteStateError, build_network,
                              dense_chain, forward, gcn_chain, init_params,
                              loss, loss_gradient, param_jacobian,
                              residual_chain)

from oracles import fd_loss_gradient, fd_param_jacobian, params_away_from_kinks

LEAKY = builtin("leaky_relu", [0.01])
IDENT = builtin("identity")


def p_formula(specs):
    """Parameter count by direct enumeration of each layer's blocks."""
    total = 0
    for s in specs:
        if s.kind == "gcn":
            total += s.in_width * s.out_width + s.graph.m * s.out_width
        else:
            total += s.out_width * s.in_width + (s.out_width if s.bias else 0)
    return total


class TestBuildNetwork:
    def test_dense_chain_count(self):
        net = build_network(dense_chain([2, 3, 1]), LEAKY)
        assert net.param_count == 3 * (2 + 1) + 1 * (3 + 1) == 13

    def test_residual_chain_count(self):
        net = build_network(residual_chain(4, 2), LEAKY)
        assert net.param_count == 2 * (16 + 4) == 40

    def test_wide_dense_count(self):
        net = build_network(dense_chain([500, 50, 50, 50]), LEAKY)
        assert net.param_count == 50 * 501 + 50 * 51 + 50 * 51 == 30150

    def test_gcn_count(self):
        g = knn_graph(gen_synthetic(6, 2, 1, seed=0).inputs, 2)
        net = build_network(gcn_chain([2, 4, 1], g), LEAKY)
        assert net.param_count == 4 * (2 + 6) + 1 * (4 + 6)

    def test_layout_blocks_disjoint_and_cover(self):
        rng = np.random.default_rng(3)
        graph = knn_graph(gen_synthetic(5, 3, 2, seed=9).inputs, 2)
        for trial in range(20):
            style = trial % 3
            if style == 0:
                widths = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
                specs = dense_chain(widths + [int(rng.integers(1, 4))])
            elif style == 1:
                specs = residual_chain(int(rng.integers(1, 6)), int(rng.integers(1, 4)))
            else:
                widths = [3] + [int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 3)))]
                specs = gcn_chain(widths, graph)
            net = build_network(specs, LEAKY)
            assert net.param_count == p_formula(specs)
            seen = np.zeros(net.param_count, dtype=int)
            for w_sl, _, b_sl, _ in net.layout:
                seen[w_sl] += 1
                if b_sl is not None:
                    seen[b_sl] += 1
            assert np.all(seen == 1)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError):
            build_network([LayerSpec("dense", 2, 3), LayerSpec("dense", 4, 1)], LEAKY)

    def test_residual_needs_square(self):
        with pytest.raises(ValueError):
            LayerSpec("residual", 3, 4)

    def test_gcn_needs_graph(self):
        with pytest.raises(ValueError):
            LayerSpec("gcn", 2, 3)

    def test_mixed_gcn_rejected(self):
        g = knn_graph(gen_synthetic(4, 2, 1, seed=0).inputs, 1)
        with pytest.raises(ValueError):
            build_network([LayerSpec("gcn", 2, 3, graph=g), LayerSpec("dense", 3, 1)], LEAKY)

    def test_empty_chain_rejected(self):
        with pytest.raises(ValueError):
            build_network([], LEAKY)


class TestInitParams:
    def test_deterministic(self):
        net = build_network(dense_chain([4, 6, 2]), LEAKY)
        np.testing.assert_array_equal(init_params(net, 7), init_params(net, 7))
        assert not np.array_equal(init_params(net, 7), init_params(net, 8))

    def test_weight_bounds(self):
        alpha = 0.01
        net = build_network(dense_chain([2, 3, 1]), builtin("leaky_relu", [alpha]))
        theta = init_params(net, 0)
        gain = np.sqrt(2.0 / (1.0 + alpha ** 2))
        w1 = theta[net.layout[0][0]]
        assert np.all(np.abs(w1) <= np.sqrt(6.0 / 2.0) * gain)
        b1 = theta[net.layout[0][2]]
        assert np.all(np.abs(b1) <= 1.0 / np.sqrt(2.0))

    def test_gain_one_without_leaky_family(self):
        net = build_network(dense_chain([2, 3, 1]), builtin("sigmoid"))
        theta = init_params(net, 0)
        w1 = theta[net.layout[0][0]]
        assert np.all(np.abs(w1) <= np.sqrt(6.0 / 2.0))

    def test_empirical_mean_near_zero(self):
        net = build_network(dense_chain([100, 100]), LEAKY)
        theta = init_params(net, 11)
        w = theta[net.layout[0][0]]  # 10^4 uniform draws
        bound = np.sqrt(6.0 / 100.0) * np.sqrt(2.0 / (1.0 + 0.01 ** 2))
        stderr = bound / np.sqrt(3.0) / np.sqrt(w.size)
        assert abs(np.mean(w)) < 3.0 * stderr


class TestForward:
    def test_affine_map(self):
        net = build_network(dense_chain([1, 1]), IDENT)
        out = forward(net, np.array([2.0, 1.0]), np.array([3.0]))
        assert out[0] == pytest.approx(7.0)

    def test_zero_weights_propagate_biases(self):
        # dense 2->2->1 with all weights zero: output is the last bias after
        # the activation maps the first-layer bias
        net = build_network(dense_chain([2, 2, 1]), LEAKY)
        theta = np.zeros(net.param_count)
        b1 = np.array([0.5, -0.4])
        b2 = np.array([1.25])
        theta[net.layout[0][2]] = b1
        theta[net.layout[1][2]] = b2
        out = forward(net, theta, np.array([3.0, -2.0]))
        assert out[0] == pytest.approx(b2[0])

    def test_residual_identity(self):
        # a single residual layer with W = 0, B = 0 is the skip connection
        # alone; no activation applies after the last layer
        net = build_network(residual_chain(5, 1), LEAKY)
        theta = np.zeros(net.param_count)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.standard_normal(5)
            np.testing.assert_allclose(forward(net, theta, x), x, atol=1e-14)

    def test_residual_chain_identity_with_identity_activation(self):
        net = build_network(residual_chain(4, 3), IDENT)
        theta = np.zeros(net.param_count)
        x = np.array([0.5, -1.5, 2.0, -0.1])
        np.testing.assert_allclose(forward(net, theta, x), x, atol=1e-14)

    def test_dimension_mismatch(self):
        net = build_network(dense_chain([3, 2]), IDENT)
        with pytest.raises(ValueError):
            forward(net, np.zeros(net.param_count), np.zeros(4))

    def test_nonfinite_reports_layer(self):
        net = build_network(dense_chain([1, 1, 1]), IDENT)
        theta = np.full(net.param_count, 1e200)
        with pytest.raises(NonFiniteStateError) as err:
            forward(net, theta, np.array([1e200]))
        assert err.value.layer == 0

    def test_last_layer_scaling(self):
        # with identity activation a one-layer net is affine: doubling the
        # weights doubles output minus bias
        net = build_network(dense_chain([3, 2]), IDENT)
        theta = init_params(net, 4)
        x = np.array([0.3, -1.2, 0.7])
        b = theta[net.layout[0][2]]
        theta2 = theta.copy()
        theta2[net.layout[0][0]] *= 2.0
        np.testing.assert_allclose(
            forward(net, theta2, x) - b, 2.0 * (forward(net, theta, x) - b),
            rtol=1e-12,
        )


class TestParamJacobian:
    def test_linear_model(self):
        net = build_network(dense_chain([1, 1], bias=False), IDENT)
        jac = param_jacobian(net, np.array([1.0]), np.array([2.0]))
        np.testing.assert_allclose(jac, [[2.0]])

    def test_affine_model(self):
        net = build_network(dense_chain([1, 1]), IDENT)
        jac = param_jacobian(net, np.array([1.0, 0.0]), np.array([3.0]))
        np.testing.assert_allclose(jac[:, 0], [3.0, 1.0])

    @pytest.mark.parametrize("arch", ["dense2", "dense3", "residual", "gcn", "sigmoid"])
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(1)
        if arch == "gcn":
            data = gen_synthetic(5, 3, 2, seed=2)
            graph = knn_graph(data.inputs, 2)
            net = build_network(gcn_chain([3, 4, 2], graph), LEAKY)
            data = Dataset(data.inputs, data.labels, graph)
            x = data.inputs
        else:
            net = {
                "dense2": build_network(dense_chain([3, 5, 2]), LEAKY),
                "dense3": build_network(dense_chain([3, 4, 4, 2]), LEAKY),
                "residual": build_network(residual_chain(4, 3), LEAKY),
                "sigmoid": build_network(dense_chain([3, 5, 2]), builtin("sigmoid")),
            }[arch]
            x = rng.standard_normal(net.in_width)
            data = Dataset(x[None, :], np.zeros((1, net.out_width)))
        theta = params_away_from_kinks(net, data, seed=3)
        jac = param_jacobian(net, theta, x)
        num = fd_param_jacobian(net, theta, x)
        assert np.linalg.norm(jac - num) / np.linalg.norm(num) < 1e-5


class TestLoss:
    def test_perfect_fit_zero(self):
        net = build_network(dense_chain([2, 1]), IDENT)
        theta = init_params(net, 0)
        x = np.array([[0.4, -0.2]])
        y = forward(net, theta, x[0])[None, :]
        assert loss(net, theta, Dataset(x, y)) == 0.0

    def test_single_example_value(self):
        # f = 3, y = 1 gives half of (3-1)^2
        net = build_network(dense_chain([1, 1]), IDENT)
        theta = np.array([0.0, 3.0])
        data = Dataset(np.array([[5.0]]), np.array([[1.0]]))
        assert loss(net, theta, data) == pytest.approx(2.0)

    def test_two_examples_sum(self):
        # residual norms 1 and 2 -> (1 + 4) / 2
        net = build_network(dense_chain([1, 1]), IDENT)
        theta = np.array([0.0, 0.0])  # predicts 0
        data = Dataset(np.array([[1.0], [1.0]]), np.array([[1.0], [2.0]]))
        assert loss(net, theta, data) == pytest.approx(2.5)

    def test_dimension_mismatch(self):
        net = build_network(dense_chain([2, 1]), IDENT)
        data = Dataset(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0]]))
        with pytest.raises(ValueError):
            loss(net, np.zeros(net.param_count), data)


class TestLossGradient:
    def test_zero_at_perfect_fit(self):
        net = build_network(dense_chain([2, 2]), IDENT)
        theta = init_params(net, 1)
        x = np.array([[0.3, 0.9], [-1.0, 0.2]])
        y = np.stack([forward(net, theta, row) for row in x])
        g = loss_gradient(net, theta, Dataset(x, y))
        np.testing.assert_allclose(g, 0.0, atol=1e-14)

    def test_linear_model_hand_value(self):
        net = build_network(dense_chain([1, 1], bias=False), IDENT)
        data = Dataset(np.array([[2.0]]), np.array([[6.0]]))
        g = loss_gradient(net, np.array([1.0]), data)
        assert g[0] == pytest.approx(2.0 * (2.0 - 6.0))

    @pytest.mark.parametrize("arch", ["dense2", "dense3", "residual", "gcn", "sigmoid"])
    def test_matches_finite_differences(self, arch):
        if arch == "gcn":
            base = gen_synthetic(6, 3, 2, seed=5)
            graph = knn_graph(base.inputs, 2)
            data = Dataset(base.inputs, base.labels, graph)
            net = build_network(gcn_chain([3, 4, 2], graph), LEAKY)
        else:
            net = {
                "dense2": build_network(dense_chain([3, 5, 2]), LEAKY),
                "dense3": build_network(dense_chain([3, 4, 4, 2]), LEAKY),
                "residual": build_network(residual_chain(4, 3), LEAKY),
                "sigmoid": build_network(dense_chain([3, 5, 2]), builtin("sigmoid")),
            }[arch]
            data = gen_synthetic(6, net.in_width, net.out_width, seed=5)
        theta = params_away_from_kinks(net, data, seed=6)
        g = loss_gradient(net, theta, data)
        num = fd_loss_gradient(net, theta, data)
        assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-5

    def test_equals_jacobian_weighted_residuals(self):
        net = build_network(dense_chain([3, 4, 2]), LEAKY)
        data = gen_synthetic(5, 3, 2, seed=8)
        theta = init_params(net, 9)
        g = loss_gradient(net, theta, data)
        total = np.zeros(net.param_count)
        for x, y in zip(data.inputs, data.labels):
            jac = param_jacobian(net, theta, x)
            total += jac @ (forward(net, theta, x) - y)
        np.testing.assert_allclose(g, total, rtol=1e-12, atol=1e-14)
