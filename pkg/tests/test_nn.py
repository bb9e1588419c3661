import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncontrol import nn
from nncontrol.errors import ConfigurationError


def fd_check(net, x, upstream, h=1e-5):
    """Analytic vs central-difference gradient of <upstream, net(x)> in params and input."""
    theta = net.get_params()
    grads, dx = net.backward(x, upstream)

    def obj(t, xx):
        return float(np.sum(upstream * net.with_params(t)(xx)))

    num = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        num[i] = (obj(theta + e, x) - obj(theta - e, x)) / (2 * h)
    numx = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        numx[idx] = (obj(theta, x + e) - obj(theta, x - e)) / (2 * h)
    return grads, num, dx, numx


def rel_err(a, b, floor=1e-8):
    mask = np.maximum(np.abs(a), np.abs(b)) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - b[mask]) / np.maximum(np.abs(a[mask]), np.abs(b[mask]))))


def away_from_kinks(pre, tol=1e-3):
    return np.all(np.abs(pre) > tol)


class TestForward:
    def test_zero_value_network_outputs_zero(self):
        net = nn.init_value(3, 5, 1.0, 1.0, seed=0, scheme="zeros")
        assert np.all(net(np.ones((4, 3))) == 0.0)

    def test_hand_evaluated_sigmoid_unit(self):
        net = nn.ValueNetwork(np.array([[1.0]]), np.array([0.0]), np.array([2.0]), np.array([1.0]),
                              eta=10, gamma=10)
        assert net(np.array([[0.0]]))[0] == pytest.approx(2.0, abs=1e-15)

    def test_equal_logits_give_uniform_probs(self):
        net = nn.init_softmax(2, 3, 4, 1.0, 1.0, seed=0, scheme="zeros")
        p = net(np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_allclose(p, 0.25, atol=1e-15)

    def test_zeros_policy_is_box_midpoint(self):
        net = nn.init_policy(2, 4, 2, 1.0, 1.0, seed=0, low=[-1.0, 0.0], high=[3.0, 2.0], scheme="zeros")
        np.testing.assert_allclose(net(np.ones((3, 2))), [[1.0, 1.0]] * 3)

    def test_unbounded_policy_is_affine_in_hidden(self):
        net = nn.init_policy(1, 4, 1, 1.0, 1.0, seed=0, scheme="zeros")
        assert net.low is None
        assert np.all(net(np.linspace(-1, 1, 5)) == 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
    def test_policy_output_inside_box(self, seed, scale):
        net = nn.init_policy(2, 6, 2, 5.0, 5.0, seed=seed, low=[-1.0, 2.0], high=[1.0, 3.0],
                             scheme="spread", bias_scale=2.0)
        x = scale * np.random.default_rng(seed).normal(size=(20, 2))
        a = net(x)
        assert np.all(a >= [-1.0, 2.0]) and np.all(a <= [1.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_value_output_bounded_by_gamma(self, seed):
        rng = np.random.default_rng(seed)
        net = nn.ValueNetwork(rng.normal(size=(5, 2)) * 4, rng.normal(size=5), rng.normal(size=5) * 3,
                              rng.normal(size=1), eta=2.0, gamma=1.5).project()
        assert np.all(np.abs(net(rng.normal(size=(50, 2)) * 100)) <= 1.5 + 1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_softmax_is_a_distribution(self, seed):
        rng = np.random.default_rng(seed)
        net = nn.SoftmaxPolicyNetwork(rng.normal(size=(4, 3)), rng.normal(size=4),
                                      rng.normal(size=(5, 4)) * 50, rng.normal(size=5), 10.0, 1e3)
        p = net(rng.normal(size=(10, 3)) * 10)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_bad_input_shape(self):
        net = nn.init_value(3, 2, 1.0, 1.0, seed=0)
        with pytest.raises(ConfigurationError):
            net(np.ones((2, 4)))


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(1)
        for net in (nn.init_policy(2, 3, 2, 5, 5, seed=1, scheme="spread"),
                    nn.init_value(2, 3, 5, 5, seed=1, scheme="spread"),
                    nn.init_softmax(2, 3, 4, 5, 5, seed=1, scheme="spread")):
            x = rng.normal(size=(4, 2))
            out = net(x)
            g, dx = net.backward(x, np.zeros_like(out))
            assert np.all(g == 0) and np.all(dx == 0)

    def test_dead_relu_unit_gets_no_gradient(self):
        net = nn.PolicyNetwork(np.array([[[1.0], [1.0]]]), np.array([[-5.0, 0.5]]),
                               np.array([[1.0, 1.0]]), np.array([0.0]), 10.0, 10.0)
        g, _ = net.backward(np.array([[1.0]]), np.array([[1.0]]))
        kern, bias = g[:2], g[2:4]
        assert kern[0] == 0 and bias[0] == 0
        assert kern[1] != 0 and bias[1] != 0

    @pytest.mark.parametrize("kind", ["policy", "policy_box", "value", "softmax"])
    def test_small_net_matches_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        if kind.startswith("policy"):
            box = ([-1.0, -2.0], [1.0, 0.5]) if kind == "policy_box" else (None, None)
            net = nn.init_policy(2, 3, 2, 5, 5, seed=3, low=box[0], high=box[1],
                                 scheme="spread", bias_scale=1.0)
        elif kind == "value":
            net = nn.init_value(2, 3, 5, 5, seed=3, scheme="spread")
        else:
            net = nn.init_softmax(2, 3, 3, 5, 5, seed=3, scheme="spread")
        x = rng.normal(size=(4, 2))
        up = rng.normal(size=net(x).shape)
        g, num, dx, numx = fd_check(net, x, up)
        assert rel_err(g, num) < 1e-5
        assert rel_err(dx, numx) < 1e-5

    def test_module_level_wrappers(self):
        net = nn.init_value(1, 2, 1.0, 1.0, seed=0)
        x = np.array([[0.3]])
        assert nn.forward(net, x) == pytest.approx(net(x))
        g1, _ = nn.backward(net, x, np.ones(1))
        g2, _ = net.backward(x, np.ones(1))
        assert np.array_equal(g1, g2)


class TestProjection:
    def test_feasible_net_unchanged(self):
        net = nn.init_value(2, 3, 10.0, 10.0, seed=0)
        p = nn.project_constraints(net)
        assert np.array_equal(p.get_params(), net.get_params())

    def test_long_kernel_row_rescaled(self):
        net = nn.ValueNetwork(np.array([[6.0, 8.0]]), np.zeros(1), np.zeros(1), np.zeros(1), eta=5.0,
                              gamma=1.0).project()
        np.testing.assert_allclose(net.kernels, [[3.0, 4.0]])

    def test_l1_axis_case(self):
        np.testing.assert_allclose(nn.project_l1_ball(np.array([3.0, 0.0]), 1.0), [1.0, 0.0])

    def test_offset_counts_in_l1_budget(self):
        net = nn.ValueNetwork(np.zeros((1, 1)), np.zeros(1), np.array([1.0]), np.array([1.0]), 1.0,
                              1.0).project()
        np.testing.assert_allclose([net.output_weights[0], net.output_offset[0]], [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(0.01, 20))
    def test_l1_projection_properties(self, values, radius):
        v = np.array(values)
        p = nn.project_l1_ball(v, radius)
        assert np.abs(p).sum() <= radius * (1 + 1e-12) + 1e-12
        np.testing.assert_allclose(nn.project_l1_ball(p, radius), p, atol=1e-12)
        # optimality: no feasible vertex direction improves the distance
        if np.abs(v).sum() > radius:
            best = np.linalg.norm(v - p)
            rng = np.random.default_rng(0)
            for _ in range(20):
                w = rng.normal(size=v.size)
                w *= radius / np.abs(w).sum() * rng.uniform()
                assert np.linalg.norm(v - w) >= best - 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_projection_idempotent_and_nonexpansive(self, seed):
        rng = np.random.default_rng(seed)
        make = lambda: nn.PolicyNetwork(rng.normal(size=(2, 4, 3)) * 3, rng.normal(size=(2, 4)),
                                        rng.normal(size=(2, 4)) * 3, rng.normal(size=2), 1.0, 2.0)
        a, b = make(), make()
        pa, pb = a.project(), b.project()
        assert np.all(np.linalg.norm(pa.kernels, axis=-1) <= 1.0 + 1e-12)
        c = np.abs(pa.output_weights).sum(axis=1) + np.abs(pa.output_offset)
        assert np.all(c <= 2.0 + 1e-12)
        np.testing.assert_allclose(pa.project().get_params(), pa.get_params(), atol=1e-12)
        assert (np.linalg.norm(pa.get_params() - pb.get_params())
                <= np.linalg.norm(a.get_params() - b.get_params()) + 1e-9)


class TestInitAndSerialization:
    def test_same_seed_bit_identical(self):
        a = nn.initialize("policy", {"d": 3, "K": 5, "q": 2, "eta": 1.0, "gamma": 1.0}, seed=4)
        b = nn.initialize("policy", {"d": 3, "K": 5, "q": 2, "eta": 1.0, "gamma": 1.0}, seed=4)
        assert a.get_params().tobytes() == b.get_params().tobytes()

    def test_default_rows_within_eta(self):
        net = nn.init_value(4, 16, 0.3, 1.0, seed=0)
        assert np.all(np.linalg.norm(net.kernels, axis=1) <= 0.3 + 1e-12)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigurationError):
            nn.init_value(1, 1, 1.0, 1.0, seed=0, scheme="xavier")

    @pytest.mark.parametrize("net", [
        nn.init_policy(2, 3, 1, 1.0, 2.0, seed=1, low=[-1.0], high=[1.0], scheme="spread"),
        nn.init_value(2, 3, 1.0, 2.0, seed=1, scheme="spread"),
        nn.init_softmax(2, 3, 4, 1.0, 2.0, seed=1, scheme="spread"),
    ])
    def test_round_trip(self, net):
        back = nn.loads(nn.dumps(net))
        assert type(back) is type(net)
        assert back.get_params().tobytes() == net.get_params().tobytes()
        x = np.random.default_rng(0).normal(size=(5, 2))
        assert np.array_equal(back(x), net(x))

    def test_rejects_foreign_format(self):
        with pytest.raises(ConfigurationError):
            nn.network_from_dict({"format": "other"})

    def test_with_params_round_trip(self):
        net = nn.init_softmax(3, 4, 2, 1.0, 1.0, seed=2, scheme="spread")
        theta = np.arange(net.num_params, dtype=float)
        assert np.array_equal(net.with_params(theta).get_params(), theta)
