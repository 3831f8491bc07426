import numpy as np
import pytest

from dmckf.errors import InvalidParameterError
from dmckf.model import (
    IMPULSIVE_MEASUREMENT_NOISE,
    IMPULSIVE_PROCESS_NOISE,
    GaussianMixture,
    StateSpaceModel,
    default_tracking_model,
    sample_mixture,
    simulate_truth,
)


class TestMixture:
    def test_single_component_variance(self, rng):
        x = GaussianMixture.gaussian(0.01).sample(rng, 100_000)
        assert 0.0095 <= x.var() <= 0.0105

    def test_impulsive_mixture_variance(self, rng):
        mix = GaussianMixture(((0.9, 0.0, 0.01), (0.1, 0.0, 100.0)))
        assert mix.variance == pytest.approx(10.009)
        x = mix.sample(rng, 1_000_000)
        assert abs(x.var() / 10.009 - 1) < 0.05

    def test_degenerate_component(self, rng):
        mix = GaussianMixture(((1.0, 2.5, 0.0),))
        assert all(sample_mixture(mix, rng) == 2.5 for _ in range(20))

    def test_total_variance_with_means(self):
        mix = GaussianMixture(((0.5, -1.0, 1.0), (0.5, 1.0, 1.0)))
        assert mix.variance == pytest.approx(2.0)

    @pytest.mark.parametrize("comps", [(), ((0.5, 0, 1),), ((1.0, 0, -1),), ((1.2, 0, 1), (-0.2, 0, 1))])
    def test_invalid(self, comps):
        with pytest.raises(InvalidParameterError):
            GaussianMixture(comps)

    def test_finite_samples(self, rng):
        assert np.all(np.isfinite(IMPULSIVE_MEASUREMENT_NOISE.sample(rng, 10_000)))


class TestTrackingModel:
    def test_transition_row(self):
        m = default_tracking_model(0.1)
        assert np.allclose(m.A[0], [1.0, 0.1, 0.005], atol=0, rtol=1e-15)

    def test_velocity_observation(self):
        for dt in (0.1, 0.5):
            m = default_tracking_model(dt)
            assert all(np.array_equal(c, [[0.0, 1.0, 0.0]]) for c in m.C)
            assert m.node_count == 20

    def test_zero_dt_identity(self):
        assert np.array_equal(default_tracking_model(0.0).A, np.eye(3))

    def test_moment_matched_covariances(self):
        m = default_tracking_model()
        assert np.allclose(m.Q, IMPULSIVE_PROCESS_NOISE.variance * np.eye(3))
        assert np.allclose(m.R[0], [[IMPULSIVE_MEASUREMENT_NOISE.variance]])

    def test_rank_deficient_c_rejected(self):
        g = GaussianMixture.gaussian(1.0)
        with pytest.raises(InvalidParameterError):
            StateSpaceModel(np.eye(2), (np.array([[1.0, 0.0], [2.0, 0.0]]),), (g, g), (g,))


def _noiseless(A, C):
    z = GaussianMixture(((1.0, 0.0, 0.0),))
    n = A.shape[0]
    return StateSpaceModel(A, (C,), (z,) * n, (z,), Q=np.zeros((n, n)), R=(np.eye(C.shape[0]),))


class TestSimulateTruth:
    def test_identity_noiseless(self, rng):
        m = _noiseless(np.eye(3), np.array([[0.0, 1.0, 0.0]]))
        traj = simulate_truth(m, [1.0, 2.0, 3.0], 5, rng)
        assert np.array_equal(traj.states, np.tile([1.0, 2.0, 3.0], (5, 1)))

    def test_one_step(self, rng):
        m = _noiseless(default_tracking_model().A, np.array([[0.0, 1.0, 0.0]]))
        traj = simulate_truth(m, [0.0, 0.0, 1.0], 1, rng)
        assert np.allclose(traj.states[0], [0.005, 0.1, 1.0], atol=1e-15)
        assert traj.observations[0][0, 0] == traj.states[0, 1]

    def test_recursion_exact(self, rng):
        m = default_tracking_model(node_count=2)
        traj = simulate_truth(m, [0.0, 0.0, 1.0], 50, rng)
        prev = traj.x0
        for k in range(50):
            assert np.array_equal(traj.states[k], m.A @ prev + traj.process[k])
            prev = traj.states[k]

    def test_gaussian_process_covariance(self, rng):
        g = GaussianMixture.gaussian(0.04)
        m = StateSpaceModel(np.eye(2), (np.array([[1.0, 0.0]]),), (g, g), (g,))
        traj = simulate_truth(m, [0.0, 0.0], 100_000, rng)
        cov = np.cov(traj.process.T)
        assert np.allclose(np.diag(cov), 0.04, rtol=0.05)

    def test_reproducible(self):
        m = default_tracking_model(node_count=3)
        a = simulate_truth(m, [0, 0, 1], 20, np.random.default_rng(7))
        b = simulate_truth(m, [0, 0, 1], 20, np.random.default_rng(7))
        assert np.array_equal(a.states, b.states)
        assert all(np.array_equal(x, y) for x, y in zip(a.observations, b.observations))

    def test_bad_inputs(self, rng):
        m = default_tracking_model(node_count=1)
        with pytest.raises(InvalidParameterError):
            simulate_truth(m, [0.0, 0.0], 3, rng)
        with pytest.raises(InvalidParameterError):
            simulate_truth(m, [0.0, 0.0, 0.0], 0, rng)
