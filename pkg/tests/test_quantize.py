import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncontrol import quantize as qz
from nncontrol.errors import ConfigurationError, DegenerateGridError
from nncontrol.problem import NoiseSampler, gaussian_noise

NORMAL = gaussian_noise(1)
OPTIMAL_TWO_POINT = np.sqrt(2 / np.pi)


def two_point():
    return qz.Quantizer(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))


class TestQuantizer:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            qz.Quantizer(np.array([[0.0], [1.0]]), np.array([0.5, 0.4]))

    def test_repeated_points_rejected(self):
        with pytest.raises(DegenerateGridError):
            qz.Quantizer(np.array([[1.0], [1.0]]), np.array([0.5, 0.5]))


class TestProject:
    def test_nearest_point(self):
        assert qz.project(two_point(), 0.2) == (1, pytest.approx([1.0]))

    def test_exact_grid_point(self):
        i, p = qz.project(two_point(), -1.0)
        assert i == 0 and p[0] == -1.0

    def test_tie_goes_to_smallest_index(self):
        assert qz.project(two_point(), 0.0)[0] == 0


class TestClvq:
    def test_single_cell_is_the_mean(self):
        q = qz.clvq_train(NORMAL, 1, 100_000, seed=0)
        assert abs(q.grid[0, 0]) < 0.02 and q.weights[0] == 1.0

    def test_two_point_grid(self):
        q = qz.clvq_train(NORMAL, 2, 200_000, seed=0)
        np.testing.assert_allclose(q.grid[:, 0], [-OPTIMAL_TWO_POINT, OPTIMAL_TWO_POINT], atol=0.05)

    def test_distortion_decreases_with_k(self):
        sample = NORMAL.draw(np.random.default_rng(5), 50_000)
        d = [qz.sample_distortion(qz.clvq_train(NORMAL, K, 100_000, seed=1), sample) for K in (2, 4, 8)]
        assert d[2] < d[1] < d[0]

    def test_constant_sampler_is_degenerate(self):
        const = NoiseSampler(1, lambda rng, n: np.zeros((n, 1)))
        with pytest.raises(DegenerateGridError):
            qz.clvq_train(const, 3, 1000, seed=0)

    def test_seed_reproducible(self):
        a = qz.clvq_train(NORMAL, 4, 20_000, seed=3)
        b = qz.clvq_train(NORMAL, 4, 20_000, seed=3)
        assert qz.dumps(a) == qz.dumps(b)

    def test_lloyd_refinement_moves_toward_oracle(self):
        raw = qz.clvq_train(NORMAL, 4, 20_000, seed=2)
        ref = qz.clvq_train(NORMAL, 4, 20_000, seed=2, lloyd_iterations=30)
        exact = qz.lloyd_normal_1d(4).grid[:, 0]
        assert np.abs(ref.grid[:, 0] - exact).max() <= np.abs(raw.grid[:, 0] - exact).max() + 1e-3

    def test_two_dimensional_grid(self):
        q = qz.clvq_train(gaussian_noise(2), 4, 100_000, seed=0)
        assert q.grid.shape == (4, 2)
        np.testing.assert_allclose(q.weights, 0.25, atol=0.03)


class TestDistortion:
    def test_perfect_cover(self):
        atoms = np.array([[-1.0], [0.5], [2.0]])
        sampler = NoiseSampler(1, lambda rng, n: atoms[rng.integers(0, 3, n)])
        q = qz.Quantizer(atoms, np.full(3, 1 / 3))
        assert qz.distortion(q, sampler, 1000, seed=0) == 0.0

    def test_single_point_at_mean_is_variance(self):
        q = qz.Quantizer(np.zeros((1, 1)), np.ones(1))
        assert qz.distortion(q, NORMAL, 200_000, seed=0) == pytest.approx(1.0, abs=0.01)

    def test_lloyd_oracle_two_point(self):
        q = qz.lloyd_normal_1d(2)
        np.testing.assert_allclose(q.grid[:, 0], [-OPTIMAL_TWO_POINT, OPTIMAL_TWO_POINT], atol=1e-12)
        assert qz.lloyd_normal_1d_distortion(q) == pytest.approx(1 - 2 / np.pi, abs=1e-12)

    def test_lloyd_oracle_matches_sampled_distortion(self):
        q = qz.lloyd_normal_1d(8)
        assert qz.distortion(q, NORMAL, 400_000, seed=1) == pytest.approx(
            qz.lloyd_normal_1d_distortion(q), rel=0.02)


class TestQuantizedExpectation:
    def test_constant_function(self):
        q = qz.lloyd_normal_1d(5)
        out = qz.quantized_expectation(q, lambda y: np.full(len(y), 3.5), lambda x, a, e: x + e,
                                       np.zeros((2, 1)), np.zeros((2, 1)))
        np.testing.assert_allclose(out, 3.5, rtol=1e-12)

    def test_weighted_sum(self):
        out = qz.quantized_expectation(two_point(), lambda y: y[:, 0], lambda x, a, e: e.copy(),
                                       np.zeros((1, 1)), np.zeros((1, 1)))
        assert out[0] == 0.0

    def test_single_atom(self):
        q = qz.Quantizer(np.array([[0.7]]), np.ones(1))
        W = lambda y: np.sin(y[:, 0])
        F = lambda x, a, e: x + 2 * a + e
        x, a = np.array([[0.1]]), np.array([[0.4]])
        assert qz.quantized_expectation(q, W, F, x, a)[0] == W(F(x, a, np.array([[0.7]])))[0]

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.floats(-2, 2))
    def test_linear_function_exact_for_stationary_quantizer(self, x, a):
        # a stationary quantizer preserves the mean, so linear W is integrated exactly
        q = qz.lloyd_normal_1d(6)
        out = qz.quantized_expectation(q, lambda y: 2 * y[:, 0] - 1, lambda x, a, e: x + a + e,
                                       np.array([[x]]), np.array([[a]]))
        assert out[0] == pytest.approx(2 * (x + a) - 1, abs=1e-10)


class TestSerialization:
    def test_round_trip(self):
        q = qz.clvq_train(NORMAL, 3, 5000, seed=0)
        back = qz.loads(qz.dumps(q))
        assert back.grid.tobytes() == q.grid.tobytes()
        assert back.weights.tobytes() == q.weights.tobytes()

    def test_rejects_other_format(self):
        with pytest.raises(ConfigurationError):
            qz.quantizer_from_dict({"format": "nncontrol.network", "version": 1})
