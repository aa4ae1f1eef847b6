import math

import numpy as np
import pytest

from tsallis_lab.bandit_env import ConfigError, InstanceSpec, RngStream
from tsallis_lab.ftrl_core import underline
from tsallis_lab.harness import RunConfig, run_experiment
from tsallis_lab.policy import (
    empirical_argmin,
    estimate_loss,
    initial_state,
    learning_rate,
    sample_arm,
    step,
    validate_alpha,
)
from test_ftrl_core import grid_search_d2


class CannedUniforms:
    """Stand-in stream feeding a fixed list of arm-sampling uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def next_arm_uniform(self):
        return self.values.pop(0)


class TestLearningRate:
    def test_examples(self):
        assert learning_rate(0.5, 4) == 0.25
        assert learning_rate(0.5, 1) == 0.5
        assert learning_rate(0.9, 81) == pytest.approx(0.1, abs=1e-15)

    def test_rejects_round_zero(self):
        with pytest.raises(ValueError):
            learning_rate(0.5, 0)


class TestAlphaValidation:
    def test_in_range_accepted(self):
        assert validate_alpha(0.5) == 0.5

    def test_large_alpha_needs_override(self):
        with pytest.raises(ConfigError):
            validate_alpha(1.0)
        assert validate_alpha(1.5, allow_unstable=True) == 1.5

    def test_nonpositive_always_rejected(self):
        with pytest.raises(ConfigError):
            validate_alpha(0.0)
        with pytest.raises(ConfigError):
            validate_alpha(-0.2, allow_unstable=True)


class TestSampleArm:
    def test_single_arm(self):
        assert sample_arm(np.array([1.0]), CannedUniforms([0.99])) == 0

    def test_near_degenerate_mass(self):
        p = np.array([1.0 - 1e-15, 1e-15])
        assert sample_arm(p, CannedUniforms([1.0 - 2e-15])) == 0
        assert sample_arm(p, CannedUniforms([0.0])) == 0

    def test_inverse_cdf_boundaries(self):
        p = np.array([0.2, 0.8])
        assert sample_arm(p, CannedUniforms([0.1999999])) == 0
        assert sample_arm(p, CannedUniforms([0.2000001])) == 1

    def test_agrees_with_bulk_inverse_cdf(self):
        p = np.array([0.2, 0.5, 0.3])
        rng = RngStream(31, 0)
        draws = [sample_arm(p, rng) for _ in range(1000)]
        uniforms = RngStream(31, 0).arm_uniforms(1000)
        expected = np.minimum(
            np.searchsorted(np.cumsum(p), uniforms, side="right"), p.size - 1
        )
        np.testing.assert_array_equal(draws, expected)

    def test_empirical_frequency(self):
        # Arm frequencies over 1e6 draws within 3 standard errors.
        n = 1_000_000
        p = np.array([0.2, 0.8])
        uniforms = RngStream(55, 0).arm_uniforms(n)
        arms = np.minimum(
            np.searchsorted(np.cumsum(p), uniforms, side="right"), p.size - 1
        )
        freq = np.mean(arms == 0)
        assert abs(freq - 0.2) <= 3.0 * math.sqrt(0.16 / n)


class TestEstimateLoss:
    def test_examples(self):
        np.testing.assert_allclose(
            estimate_loss(np.array([0.5, 0.5]), 0, 0.4), [0.8, 0.0]
        )
        np.testing.assert_allclose(
            estimate_loss(np.array([0.2, 0.8]), 1, 1.0), [0.0, 1.25]
        )

    def test_support_is_the_chosen_arm(self):
        est = estimate_loss(np.array([0.25, 0.5, 0.25]), 1, 0.7)
        assert est[0] == 0.0 and est[2] == 0.0
        assert est[1] == pytest.approx(1.4)

    def test_unbiasedness_monte_carlo(self):
        # Averaged over sampled arms at fixed p the estimate recovers the
        # loss vector, componentwise within 3 standard errors.
        n = 1_000_000
        p = np.array([0.3, 0.7])
        losses = np.array([0.4, 0.6])
        uniforms = RngStream(99, 0).arm_uniforms(n)
        arms = np.minimum(
            np.searchsorted(np.cumsum(p), uniforms, side="right"), p.size - 1
        )
        for i in range(2):
            values = np.where(arms == i, losses[i] / p[i], 0.0)
            se = values.std(ddof=1) / math.sqrt(n)
            assert abs(values.mean() - losses[i]) <= 3.0 * se


class TestEmpiricalArgmin:
    def test_examples(self):
        assert empirical_argmin(np.array([0.0, 2.0, 1.0])) == 0
        assert empirical_argmin(np.array([3.0, 3.0])) == 0  # tie -> lowest index
        assert empirical_argmin(np.array([5.0, 1.0, 1.0])) == 1


class TestStep:
    def test_first_round_is_uniform(self):
        for d in (1, 2, 6):
            for alpha in (0.1, 0.5, 0.9):
                state = initial_state(alpha, d)
                np.testing.assert_allclose(
                    state.last_point.probs, np.full(d, 1.0 / d), atol=1e-12
                )

    def test_hand_trace_two_arms(self):
        # Round 1: uniform p, forced onto arm 1, replayed loss (0, 1).
        state = initial_state(0.5, 2)
        rng = CannedUniforms([0.75])
        state2, record = step(state, np.array([0.0, 1.0]), rng)

        assert record.t == 1
        assert record.chosen == 1
        np.testing.assert_allclose(record.p.probs, [0.5, 0.5], atol=1e-12)
        assert record.eta == 0.5
        assert record.observed_loss == 1.0
        np.testing.assert_allclose(record.est_loss, [0.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(state2.cumulative, [0.0, 2.0], atol=1e-12)
        assert state2.t == 2

        # Round 2 distribution cross-checked by grid search.
        grid = grid_search_d2(0.5 / math.sqrt(2.0), np.array([0.0, 2.0]))
        np.testing.assert_allclose(state2.last_point.probs, grid, atol=1e-4)

    def test_record_carries_pre_update_distribution(self):
        state = initial_state(0.5, 3)
        rng = RngStream(3, 0)
        p_before = state.last_point.probs.copy()
        _, record = step(state, np.array([0.2, 0.9, 0.4]), rng)
        np.testing.assert_array_equal(record.p.probs, p_before)

    def test_trajectory_invariants(self):
        # Sandwich and per-step growth hold along a genuine trajectory;
        # the estimate's support stays on the chosen arm.
        spec = InstanceSpec.bernoulli([0.1, 0.4, 0.7])
        rng = RngStream(17, 0)
        state = initial_state(0.5, 3)
        env = RngStream(18, 0)
        previous = None
        for t in range(1, 400):
            losses = (env.next_env_uniforms(3) < spec.means).astype(float)
            state_next, record = step(state, losses, rng)
            p = record.p.probs
            shifted = record.eta * underline(state.cumulative).values
            lower = 4.0 / (shifted + 2.0 * math.sqrt(3)) ** 2
            assert np.all(p >= lower - 1e-9)
            pos = shifted > 0
            assert np.all(p[pos] <= 4.0 / shifted[pos] ** 2 + 1e-9)
            if previous is not None:
                assert np.all(p <= 7.0 * 3 * previous + 1.0 / (t - 1) + 1e-9)
            off_support = np.delete(record.est_loss, record.chosen)
            assert np.all(off_support == 0.0)
            assert np.dot(record.est_loss, p) == pytest.approx(
                record.observed_loss, abs=1e-12
            )
            previous = p
            state = state_next

    def test_cumulative_estimates_nondecreasing(self):
        spec = InstanceSpec.bernoulli([0.2, 0.6])
        rng = RngStream(19, 0)
        env = RngStream(20, 1)
        state = initial_state(0.3, 2)
        for _ in range(200):
            losses = (env.next_env_uniforms(2) < spec.means).astype(float)
            state_next, _ = step(state, losses, rng)
            assert np.all(state_next.cumulative >= state.cumulative)
            state = state_next

    @pytest.mark.parametrize("horizon,reps", [(99, 400), (999, 150)])
    def test_mean_estimate_growth(self, horizon, reps):
        # After n rounds the cumulative estimates average n * mu per arm.
        spec = InstanceSpec.bernoulli([0.2, 0.5])
        config = RunConfig(
            instance=spec,
            horizon=horizon,
            replications=reps,
            master_seed=2024,
            checkpoints=np.array([horizon]),
        )
        result = run_experiment(config)
        finals = result.final_cumulative
        for i, mu in enumerate(spec.means):
            mean = finals[:, i].mean()
            se = finals[:, i].std(ddof=1) / math.sqrt(reps)
            assert abs(mean - horizon * mu) <= 3.0 * se
