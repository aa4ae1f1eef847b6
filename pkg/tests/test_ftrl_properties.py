"""Randomized properties of the solution map and the divergence geometry."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsallis_lab.ftrl_core import (
    bregman,
    potential_gradient,
    solve_ftrl,
    underline,
)

finite_losses = arrays(
    np.float64,
    st.integers(min_value=2, max_value=8),
    elements=st.floats(-100.0, 100.0, allow_nan=False, allow_infinity=False),
)


def interior_point(rng, d, floor=1e-4):
    p = rng.dirichlet(np.ones(d))
    p = (1.0 - d * floor) * p + floor
    return p / p.sum()


@given(finite_losses, st.floats(0.01, 0.99))
def test_normalization(losses, eta):
    point = solve_ftrl(eta, losses).point
    assert abs(float(point.probs.sum()) - 1.0) <= 1e-10


@given(finite_losses, st.floats(0.01, 0.99), st.sampled_from([-5.0, 3.7]))
def test_shift_invariance(losses, eta, shift):
    base = solve_ftrl(eta, losses).point.probs
    shifted = solve_ftrl(eta, losses + shift).point.probs
    assert np.max(np.abs(base - shifted)) <= 1e-9


@settings(max_examples=60)
@given(finite_losses, st.floats(0.01, 0.99), st.floats(0.1, 10.0), st.data())
def test_monotone_in_each_coordinate(losses, eta, delta, data):
    i = data.draw(st.integers(0, losses.size - 1))
    base = solve_ftrl(eta, losses).point.probs
    bumped_losses = losses.copy()
    bumped_losses[i] += delta
    bumped = solve_ftrl(eta, bumped_losses).point.probs
    assert bumped[i] <= base[i] + 1e-10
    others = np.delete(np.arange(losses.size), i)
    assert np.all(bumped[others] >= base[others] - 1e-10)


def test_sandwich_bounds():
    rng = np.random.default_rng(10)
    for _ in range(300):
        d = int(rng.integers(2, 10))
        eta = float(rng.uniform(0.01, 0.99))
        losses = rng.uniform(0.0, 40.0, size=d)
        probs = solve_ftrl(eta, losses).point.probs
        shifted = eta * underline(losses).values
        lower = 4.0 / (shifted + 2.0 * math.sqrt(d)) ** 2
        assert np.all(probs >= lower - 1e-9)
        positive = shifted > 0.0
        assert np.all(probs[positive] <= 4.0 / shifted[positive] ** 2 + 1e-9)
        # The zero-shift arm with maximal mass holds at least 1/d.
        assert probs.max() >= 1.0 / d - 1e-12
        assert shifted[int(np.argmax(probs))] == 0.0


def test_learning_rate_continuity():
    # Moving from alpha/sqrt(t) to alpha/sqrt(t+1) can raise any single
    # component by at most 1/t.
    rng = np.random.default_rng(11)
    for _ in range(300):
        d = int(rng.integers(2, 8))
        alpha = float(rng.uniform(0.05, 0.95))
        t = int(rng.integers(1, 10_000))
        losses = rng.uniform(0.0, 200.0, size=d)
        coarse = solve_ftrl(alpha / math.sqrt(t), losses).point.probs
        fine = solve_ftrl(alpha / math.sqrt(t + 1), losses).point.probs
        assert np.max(fine - coarse) <= 1.0 / t + 1e-9


def test_update_growth_factor():
    # Adding the inverse of one component's probability to its loss can
    # grow no component by more than a factor 7d.
    rng = np.random.default_rng(12)
    for _ in range(200):
        d = int(rng.integers(2, 8))
        losses = rng.uniform(-10.0, 10.0, size=d)
        base = solve_ftrl(1.0, losses).point.probs
        j = int(rng.integers(d))
        bumped_losses = losses.copy()
        bumped_losses[j] += 1.0 / base[j]
        bumped = solve_ftrl(1.0, bumped_losses).point.probs
        assert np.all(bumped <= (7.0 * d + 1e-6) * base)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_generalized_pythagoras(d, seed):
    rng = np.random.default_rng(seed)
    x = interior_point(rng, d)
    y = interior_point(rng, d)
    z = interior_point(rng, d)
    lhs = bregman(x, y) + bregman(z, x) - bregman(z, y)
    rhs = float(np.dot(potential_gradient(x) - potential_gradient(y), x - z))
    assert abs(lhs - rhs) <= 1e-9


def test_gradient_optimality():
    # At the minimizer the potential gradient offsets the scaled losses
    # by a constant vector.
    rng = np.random.default_rng(13)
    for _ in range(300):
        d = int(rng.integers(2, 10))
        eta = float(rng.uniform(0.01, 0.99))
        losses = rng.uniform(0.0, 30.0, size=d)
        probs = solve_ftrl(eta, losses).point.probs
        stationarity = potential_gradient(probs) + eta * losses
        assert stationarity.max() - stationarity.min() <= 1e-8


def test_grid_search_oracle_two_arms():
    from test_ftrl_core import grid_search_d2

    rng = np.random.default_rng(14)
    for _ in range(10):
        eta = float(rng.uniform(0.05, 1.0))
        losses = rng.uniform(0.0, 20.0, size=2)
        probs = solve_ftrl(eta, losses).point.probs
        grid = grid_search_d2(eta, losses)
        assert np.max(np.abs(probs - grid)) <= 1e-4


def test_solution_map_idempotent_under_underline():
    rng = np.random.default_rng(15)
    for _ in range(50):
        d = int(rng.integers(2, 8))
        losses = rng.normal(scale=20.0, size=d)
        direct = solve_ftrl(0.4, losses).point.probs
        reduced = solve_ftrl(0.4, underline(losses).values).point.probs
        np.testing.assert_allclose(direct, reduced, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 5])
def test_uniform_fixed_point(d):
    probs = solve_ftrl(0.9, np.zeros(d)).point.probs
    np.testing.assert_allclose(probs, np.full(d, 1.0 / d), atol=1e-12)
