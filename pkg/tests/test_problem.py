import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncontrol.errors import ConditioningError, ConfigurationError, DomainViolationError
from nncontrol.oracle import grid_dp_solve, riccati_solve
from nncontrol.problem import (
    BoxControls,
    ControlProblem,
    FiniteControls,
    LocalizationSpec,
    PenaltySpec,
    discrete_noise,
    draw_noise_paths,
    gaussian_noise,
    localize,
    localized,
    martingale_drift,
    penalized_costs,
    rollout,
    simulate,
    step,
)
from nncontrol.problems import grid_toy_problem, grid_toy_spec, lq_problem, scalar_lq_spec


def make_problem(F, f, g, horizon=1, noise=None, controls=None, **kw):
    return ControlProblem(horizon, 1, 1, F, f, g, noise or gaussian_noise(1), controls, **kw)


zero_f = lambda x, a: np.zeros(x.shape[0])
zero_g = lambda x: np.zeros(x.shape[0])


class TestStep:
    def test_identity_case(self):
        pb = make_problem(lambda x, a, e: x + a + e, zero_f, zero_g)
        assert step(pb, 0.0, 0.0, 0.0)[0] == 0.0

    def test_affine_drift_and_noise(self):
        pb = make_problem(lambda x, a, e: 0.5 * x + a + e, zero_f, zero_g)
        assert step(pb, 2.0, 1.0, -0.5)[0] == 1.5

    def test_control_dimension_mismatch(self):
        pb = make_problem(lambda x, a, e: x + a + e, zero_f, zero_g)
        with pytest.raises(ConfigurationError):
            step(pb, 0.0, [0.0, 1.0], 0.0)

    def test_invalid_declaration(self):
        with pytest.raises(ConfigurationError):
            ControlProblem(0, 1, 1, None, None, None, gaussian_noise(1))
        with pytest.raises(ConfigurationError):
            ControlProblem(1, 1, 2, None, None, None, gaussian_noise(1), BoxControls([0.0], [1.0]))


class TestSimulate:
    def test_terminal_only_cost(self):
        pb = make_problem(lambda x, a, e: x.copy(), zero_f, lambda x: x[:, 0])
        tr = simulate(pb, [lambda x: np.zeros((len(x), 1))], 3.0, seed=0)
        assert tr.realized_cost == 3.0

    def test_deterministic_cost_sum(self):
        pb = make_problem(lambda x, a, e: x.copy(), lambda x, a: a[:, 0] ** 2, zero_g, horizon=2)
        one = lambda x: np.ones((len(x), 1))
        assert simulate(pb, [one, one], 0.0, seed=1).realized_cost == 2.0

    def test_same_seed_same_trajectory(self):
        pb = lq_problem(scalar_lq_spec())
        pols = [riccati_solve(scalar_lq_spec()).policy(n) for n in range(3)]
        a, b = simulate(pb, pols, 1.0, seed=5), simulate(pb, pols, 1.0, seed=5)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.realized_cost == b.realized_cost

    def test_trajectory_invariants(self):
        pb = lq_problem(scalar_lq_spec())
        pols = [riccati_solve(scalar_lq_spec()).policy(n) for n in range(3)]
        tr = simulate(pb, pols, [0.7], seed=9)
        assert np.array_equal(tr.replay_states(pb), tr.states)
        assert tr.recompute_cost(pb) == pytest.approx(tr.realized_cost, rel=1e-12)

    def test_out_of_box_control_raises(self):
        pb = make_problem(lambda x, a, e: x, zero_f, zero_g, controls=BoxControls([-1.0], [1.0]))
        with pytest.raises(DomainViolationError):
            simulate(pb, [lambda x: np.full((len(x), 1), 1.0 + 1e-6)], 0.0, seed=0)

    def test_tolerance_absorbs_rounding(self):
        pb = make_problem(lambda x, a, e: x, zero_f, zero_g, controls=BoxControls([-1.0], [1.0]))
        simulate(pb, [lambda x: np.full((len(x), 1), 1.0 + 1e-10)], 0.0, seed=0)

    def test_finite_control_membership(self):
        pb = make_problem(lambda x, a, e: x, zero_f, zero_g, controls=FiniteControls([[0.0], [1.0]]))
        with pytest.raises(DomainViolationError):
            simulate(pb, [lambda x: np.full((len(x), 1), 0.5)], 0.0, seed=0)

    def test_wrong_number_of_policies(self):
        pb = make_problem(lambda x, a, e: x, zero_f, zero_g, horizon=2)
        with pytest.raises(ConfigurationError):
            simulate(pb, [lambda x: x], 0.0, seed=0)

    def test_nonfinite_cost_is_conditioning_error(self):
        pb = make_problem(lambda x, a, e: x * 1e200, lambda x, a: x[:, 0] ** 2, zero_g, horizon=3)
        with pytest.raises(ConditioningError), np.errstate(over="ignore"):
            simulate(pb, [lambda x: np.zeros((len(x), 1))] * 3, 1.0, seed=0)

    def test_riccati_policy_cost_matches_value(self):
        spec = scalar_lq_spec()
        pb, ric = lq_problem(spec), riccati_solve(spec)
        M = 100_000
        E = draw_noise_paths(pb, 3, M, np.random.default_rng(3))
        _, _, cost = rollout(pb, [ric.policy(n) for n in range(3)], np.ones((M, 1)), E)
        se = cost.std(ddof=1) / np.sqrt(M)
        assert abs(cost.mean() - ric.value(0, [[1.0]])[0]) < 3 * se


class TestPenalty:
    def test_no_constraints_unchanged(self):
        pb = lq_problem(scalar_lq_spec())
        pen = penalized_costs(pb, PenaltySpec())
        x, a = np.array([[1.0], [2.0]]), np.array([[0.5], [-1.0]])
        assert np.array_equal(pen.cost(x, a), pb.cost(x, a))
        assert np.array_equal(pen.terminal(x), pb.terminal(x))

    def test_inequality_formula(self):
        spec = PenaltySpec(inequality=(lambda x, a: a[:, 0],), coefficients=(10.0,))
        assert spec.value(np.zeros((1, 1)), np.array([[-0.3]]))[0] == pytest.approx(3.0)

    def test_equality_formula(self):
        spec = PenaltySpec(equality=(lambda x, a: x[:, 0] - 1,), coefficients=(2.0,))
        assert spec.value(np.array([[2.0]]), np.zeros((1, 1)))[0] == 2.0

    def test_nonpositive_coefficient(self):
        with pytest.raises(ConfigurationError):
            PenaltySpec(equality=(lambda x, a: x[:, 0],), coefficients=(0.0,))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_zero_on_feasible_positive_off(self, x, a):
        spec = PenaltySpec(equality=(lambda x, a: x[:, 0] - a[:, 0],),
                           inequality=(lambda x, a: a[:, 0],), coefficients=(3.0, 4.0))
        v = spec.value(np.array([[x]]), np.array([[a]]))[0]
        assert v >= 0
        if x == a and a >= 0:
            assert v == 0
        if x != a or a < 0:
            assert v > 0

    def test_terminal_state_penalty(self):
        pb = lq_problem(scalar_lq_spec())
        pen = penalized_costs(pb, PenaltySpec(terminal_penalty=lambda x: 5 * np.abs(x[:, 0]),
                                              terminal_penalty_grad=lambda x: 5 * np.sign(x)))
        assert pen.terminal(np.array([[2.0]]))[0] == 4.0 + 10.0
        assert pen.terminal_cost_grad(np.array([[2.0]]))[0, 0] == 4.0 + 5.0

    def test_penalty_gradient_finite_difference(self):
        pb = lq_problem(scalar_lq_spec())
        spec = PenaltySpec(equality=(lambda x, a: x[:, 0] - 2 * a[:, 0],),
                           inequality=(lambda x, a: 1 - a[:, 0],), coefficients=(3.0, 4.0),
                           equality_grads=(lambda x, a: (np.ones_like(x), -2 * np.ones_like(a)),),
                           inequality_grads=(lambda x, a: (np.zeros_like(x), -np.ones_like(a)),))
        pen = penalized_costs(pb, spec)
        x, a, h = np.array([[0.4]]), np.array([[1.7]]), 1e-6
        gx, ga = pen.stage_cost_grad(x, a)
        assert gx[0, 0] == pytest.approx((pen.cost(x + h, a) - pen.cost(x - h, a))[0] / (2 * h), rel=1e-6)
        assert ga[0, 0] == pytest.approx((pen.cost(x, a + h) - pen.cost(x, a - h))[0] / (2 * h), rel=1e-6)


class TestLocalization:
    def test_inside_unchanged(self):
        np.testing.assert_array_equal(localize(LocalizationSpec(1.0), [0.5, 0.0]), [0.5, 0.0])

    def test_normalization(self):
        np.testing.assert_allclose(localize(LocalizationSpec(1.0), [3.0, 4.0]), [0.6, 0.8])

    def test_origin(self):
        np.testing.assert_array_equal(localize(LocalizationSpec(2.0), [0.0, 0.0]), [0.0, 0.0])

    def test_bad_radius(self):
        with pytest.raises(ConfigurationError):
            LocalizationSpec(0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4), st.floats(0.1, 100))
    def test_in_ball_and_idempotent(self, x, r):
        spec = LocalizationSpec(r)
        y = localize(spec, np.array(x))
        assert np.linalg.norm(y) <= r * (1 + 1e-12)
        np.testing.assert_allclose(localize(spec, y), y, rtol=1e-12, atol=1e-12)

    def test_localized_jacobian_matches_finite_difference(self):
        pb = localized(lq_problem(scalar_lq_spec(A=2.0)), LocalizationSpec(1.5))
        x, a, e, h = np.array([[1.0]]), np.array([[0.3]]), np.array([[0.1]]), 1e-6
        Fx, Fa = pb.dynamics_jac(x, a, e)
        num = (pb.next_state(x + h, a, e) - pb.next_state(x - h, a, e)) / (2 * h)
        assert Fx[0, 0, 0] == pytest.approx(num[0, 0], abs=1e-8)
        assert np.all(np.abs(pb.next_state(10 * x, a, e)) <= 1.5)


class TestMartingaleDrift:
    def setup_method(self):
        self.pb = grid_toy_problem()
        self.sol = grid_dp_solve(self.pb, grid_toy_spec(self.pb))
        self.values = [self.sol.value_fn(n) for n in range(self.pb.horizon + 1)]

    def test_optimal_policy_is_martingale(self):
        pols = [self.sol.policy(n) for n in range(4)]
        for n, x in [(0, 0.0), (1, -6.0), (2, 3.0), (3, 9.0)]:
            d, se = martingale_drift(self.pb, pols, self.values, n, [x], 20_000, seed=n)
            assert abs(d) <= 3 * se + 1e-12

    def test_constant_policy_is_submartingale(self):
        zero = [lambda x: np.zeros((len(x), 1))] * 4
        drifts = [martingale_drift(self.pb, zero, self.values, n, [x], 20_000, seed=1)
                  for n in range(4) for x in (-8.0, 0.0, 8.0)]
        assert all(d >= -3 * se for d, se in drifts)
        assert max(d for d, _ in drifts) > 1.0

    def test_deterministic_exact_value(self):
        pb = ControlProblem(2, 1, 1, lambda x, a, e: x + a, lambda x, a: a[:, 0] ** 2, lambda x: x[:, 0] ** 2,
                            gaussian_noise(1, 0.0))
        # V_1 = x^2/2, a_1 = -x/2; V_0 = x^2/3, a_0 = -x/3
        V = [lambda x: x[:, 0] ** 2 / 3, lambda x: x[:, 0] ** 2 / 2, lambda x: x[:, 0] ** 2]
        pols = [lambda x: -x / 3, lambda x: -x / 2]
        for n in (0, 1):
            d, se = martingale_drift(pb, pols, V, n, [1.7], 10, seed=0)
            assert abs(d) < 1e-12 and se == 0.0

    def test_one_step_identity_converges(self):
        pb = lq_problem(scalar_lq_spec(horizon=1))
        pol = [lambda x: -0.3 * x]
        # V_0(x) = f(x, a) + E g(F) with E (0.7 x + e)^2 = 0.49 x^2 + 1
        V = [lambda x: 0.1 * x[:, 0] ** 2 + 0.09 * x[:, 0] ** 2 + 0.49 * x[:, 0] ** 2 + 1.0,
             lambda x: x[:, 0] ** 2]
        d, se = martingale_drift(pb, pol, V, 0, [2.0], 400_000, seed=4)
        assert abs(d) < 4 * se and se < 0.01

    def test_time_index_checked(self):
        with pytest.raises(ConfigurationError):
            martingale_drift(self.pb, [], self.values, 4, [0.0], 10, seed=0)


class TestNoise:
    def test_discrete_noise_law(self):
        noise = discrete_noise([-1.0, 2.0], [0.25, 0.75])
        draws = noise.draw(np.random.default_rng(0), 40_000)
        assert set(np.unique(draws)) == {-1.0, 2.0}
        assert abs((draws == 2.0).mean() - 0.75) < 0.01

    def test_discrete_noise_validates(self):
        with pytest.raises(ConfigurationError):
            discrete_noise([0.0, 1.0], [0.5, 0.6])

    def test_noise_paths_shape(self):
        pb = lq_problem(scalar_lq_spec())
        assert draw_noise_paths(pb, 3, 5, np.random.default_rng(0)).shape == (3, 5, 1)
