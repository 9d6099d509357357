import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import IDENTITY, make_net
from koopbound.exceptions import DimensionError, KoopboundError
from koopbound.kernels import FinalMapSpec, FinalMapTerm
from koopbound.matana import WeightClassSpec, class_membership, condition_number
from koopbound.network import (
    ActivationSpec,
    LayerSpec,
    NetworkSpec,
    activation_derivative_bounds,
    default_kernel_config,
    final_map_eval,
    forward,
    generate_network,
    koopman_activation_norm_bound,
)

SLR = ActivationSpec("smoothed_leaky_relu", 0.25, 1.0)


class TestActivation:
    def test_closed_form(self):
        act = ActivationSpec("smoothed_leaky_relu", 0.5, 2.0)
        x = 1.5
        expected = 0.5 * x + 0.5 * 0.5 * (x + math.sqrt(x * x + 4.0))
        assert float(act(x)) == pytest.approx(expected, rel=1e-15)

    def test_derivative_bounds_examples(self):
        assert activation_derivative_bounds(IDENTITY) == (1.0, 1.0)
        assert activation_derivative_bounds(SLR) == (1.0, 0.25)
        with pytest.raises(KoopboundError, match="bi-Lipschitz"):
            activation_derivative_bounds(ActivationSpec("tanh"))
        assert activation_derivative_bounds(ActivationSpec("tanh"), require_bilipschitz=False) == (1.0, 0.0)

    @pytest.mark.parametrize("alpha,beta", [(0.25, 1.0), (0.5, 0.3), (0.1, 5.0)])
    def test_dense_sampling_matches_bounds(self, alpha, beta):
        act = ActivationSpec("smoothed_leaky_relu", alpha, beta)
        sup_d, inf_d = activation_derivative_bounds(act)
        d = act.derivative(np.linspace(-50, 50, 200_001))
        assert np.all(d >= inf_d - 1e-9) and np.all(d <= sup_d + 1e-9)
        # the bounds are limits at +-infinity; the gap decays like beta^2 / x^2,
        # so [-50, 50] alone leaves ~1e-4 for beta = 1
        tail = np.geomspace(1.0, 1e5, 20_001)
        d = act.derivative(np.concatenate([-tail[::-1], np.linspace(-1, 1, 2001), tail]))
        assert np.all(d >= inf_d - 1e-9) and np.all(d <= sup_d + 1e-9)
        assert d.max() == pytest.approx(sup_d, abs=1e-6)
        assert d.min() == pytest.approx(inf_d, abs=1e-6)

    def test_derivative_matches_finite_difference(self, rng):
        x = rng.standard_normal(50) * 3
        h = 1e-6
        fd = (SLR(x + h) - SLR(x - h)) / (2 * h)
        assert np.allclose(SLR.derivative(x), fd, atol=1e-8)

    @given(st.floats(-1e3, 1e3, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_inverse_round_trip(self, y):
        assert float(SLR(SLR.inverse(y))) == pytest.approx(y, abs=1e-9 * max(1.0, abs(y)))

    def test_koopman_norm_bound(self):
        for d in (1, 2, 7):
            assert koopman_activation_norm_bound(IDENTITY, d) == 1.0
        assert koopman_activation_norm_bound(ActivationSpec(alpha=0.5), 2) == 4.0
        assert koopman_activation_norm_bound(SLR, 3) == 64.0
        with pytest.raises(KoopboundError, match="unbounded"):
            koopman_activation_norm_bound(ActivationSpec("tanh"), 2)

    def test_validation(self):
        with pytest.raises(KoopboundError):
            ActivationSpec("relu")
        with pytest.raises(KoopboundError):
            ActivationSpec(alpha=1.0)
        with pytest.raises(KoopboundError):
            ActivationSpec(beta=0.0)


class TestForward:
    def test_final_map_at_origin(self):
        net = make_net([np.eye(2)], [2.0, 2.0], cs=[np.eye(1)[0]])
        assert np.allclose(forward(net, [0.0, 0.0]), [1.0])

    def test_one_layer_examples(self):
        net = make_net([np.eye(2)], [2.0, 2.0], m=2, cs=[np.array([1.0, 0.0])])
        assert np.array_equal(forward(net, np.zeros(2)), [1.0, 0.0])
        x = np.array([0.6, 0.8])
        assert np.allclose(forward(net, x), [math.exp(-1.0), 0.0], rtol=1e-15)

    def test_hand_built_two_layer_composition(self):
        W1 = np.array([[1.0, 2.0], [0.0, -1.0]])
        W2 = np.array([[2.0, 0.0], [1.0, 1.0]])
        b1, b2 = np.array([1.0, 0.0]), np.array([0.0, -1.0])
        net = make_net([W1, W2], [2.0, 2.0, 2.0], biases=[b1, b2], rates=[2],
                       Ms=[np.diag([3.0])], cs=[np.array([0.5])])
        x = np.array([1.0, -1.0])
        h1 = np.array([1 * 1 + 2 * (-1) + 1, 0 * 1 + (-1) * (-1) + 0])   # [0, 1]
        h2 = np.array([2 * h1[0] + 0 * h1[1] + 0, 1 * h1[0] + 1 * h1[1] - 1])  # [0, 0]
        expected = math.exp(-2 * float(h2 @ h2)) * 3.0 * 0.5
        assert float(forward(net, x)[0]) == expected

    def test_final_map_eval(self, rng):
        fm = FinalMapSpec((FinalMapTerm(1, 2 * np.eye(2), [1.0, 0.0]),), 3, 2.5)
        assert np.array_equal(final_map_eval(fm, np.zeros(3)), [2.0, 0.0])
        terms = tuple(FinalMapTerm(int(rng.integers(1, 4)), np.diag(rng.random(2) + 0.1),
                                   rng.standard_normal(2)) for _ in range(3))
        fm = FinalMapSpec(terms, 3, 2.5)
        x = rng.standard_normal(3)
        oracle = np.zeros(2)
        for t in terms:
            oracle += math.exp(-t.rate * float(x @ x)) * (t.M @ t.c)
        assert np.allclose(final_map_eval(fm, x), oracle, rtol=1e-12, atol=0)

    def test_batch_equals_pointwise(self, rng):
        net = generate_network(width=3, depth=2, T=2, m=2, seed=4)
        X = rng.standard_normal((5, 3))
        batch = forward(net, X)
        for i in range(5):
            assert np.allclose(batch[i], forward(net, X[i]), rtol=1e-14, atol=1e-16)

    def test_output_bounded_by_direction_norms(self, rng):
        net = generate_network(width=2, depth=3, T=3, m=2, recipe="conditioned", kappa_target=5, seed=9)
        cap = sum(np.linalg.norm(t.direction) for t in net.final_map.terms)
        X = rng.standard_normal((500, 2)) * 5
        assert np.all(np.linalg.norm(forward(net, X), axis=1) <= cap + 1e-12)

    def test_identity_net_collapses_to_matrix_product(self, rng):
        Ws = [rng.standard_normal((3, 3)) for _ in range(3)]
        net = make_net(Ws, [2.0] * 4, rates=[1], Ms=[np.eye(1)], cs=[np.array([1.0])])
        x = rng.standard_normal(3) * 0.3
        y = Ws[2] @ Ws[1] @ Ws[0] @ x
        assert float(forward(net, x)[0]) == pytest.approx(math.exp(-float(y @ y)), rel=1e-10)

    def test_dimension_mismatch_names_layer(self):
        net = make_net([np.eye(2)], [2.0, 2.0])
        with pytest.raises(DimensionError, match="layer 1"):
            forward(net, np.zeros(3))


class TestNetworkSpec:
    def test_validation(self):
        with pytest.raises(DimensionError, match="layer 2"):
            make_net([np.eye(2), np.eye(3)], [2.0, 2.0, 2.0])
        with pytest.raises(KoopboundError, match=r"s_l > d_l/2"):
            make_net([np.eye(2)], [1.0, 2.0])
        with pytest.raises(DimensionError):
            LayerSpec(np.eye(2), np.zeros(3))
        layer = LayerSpec(np.eye(2), np.zeros(2), IDENTITY)
        fm = FinalMapSpec((FinalMapTerm(1, np.eye(1), [1.0]),), 2, 2.0)
        with pytest.raises(KoopboundError, match="final layer"):
            NetworkSpec((layer,), fm, (2.0, 2.0), 1, 1)

    def test_json_round_trip(self):
        net = generate_network(width=2, depth=2, T=2, m=3, recipe="conditioned", kappa_target=3, seed=1)
        text = json.dumps(net.to_json())
        back = NetworkSpec.from_json(json.loads(text))
        assert json.dumps(back.to_json()) == text
        assert back.widths == (2, 2, 2)

    def test_default_kernel_config(self):
        net = generate_network(width=2, depth=1, T=2, m=2, seed=0)
        cfg = default_kernel_config(net)
        assert cfg.T == 2 and cfg.m == 2 and cfg.input_dim == 2
        assert cfg.tasks[0][0].sobolev_order == net.sobolev_orders[0]


class TestGenerator:
    def test_orthogonal_recipe_members(self):
        net = generate_network(width=4, depth=3, recipe="orthogonal", seed=2)
        spec = WeightClassSpec("orthogonal", 1.0, 1.0)
        assert all(class_membership(layer.W, spec).member for layer in net.layers)

    def test_scaled_orthogonal(self):
        net = generate_network(width=3, depth=2, recipe="scaled_orthogonal", gamma=0.5, seed=2)
        for layer in net.layers:
            assert np.allclose(np.linalg.svd(layer.W, compute_uv=False), 0.5, atol=1e-12)

    @pytest.mark.parametrize("kappa", [1.0, 3.0, 10.0, 100.0])
    def test_conditioned_recipe(self, kappa):
        net = generate_network(width=3, depth=2, recipe="conditioned", kappa_target=kappa, seed=7)
        for layer in net.layers:
            assert 0.95 * kappa <= condition_number(layer.W) <= 1.05 * kappa

    def test_deterministic(self):
        a = generate_network(width=3, depth=2, T=2, m=2, recipe="conditioned", kappa_target=4, seed=11)
        b = generate_network(width=3, depth=2, T=2, m=2, recipe="conditioned", kappa_target=4, seed=11)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_tall_layers_and_errors(self):
        net = generate_network(widths=[2, 3, 5], seed=0)
        assert net.widths == (2, 3, 5)
        with pytest.raises(KoopboundError, match="wide"):
            generate_network(widths=[3, 2])
        with pytest.raises(KoopboundError):
            generate_network(recipe="conditioned")
        with pytest.raises(KoopboundError):
            generate_network(recipe="sparse")
