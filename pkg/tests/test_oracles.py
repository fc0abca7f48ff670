import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualrl import oracles as O
from dualrl.dataset import from_behavior, from_weights
from dualrl.errors import BudgetExceeded, NotErgodic, UndiscountedUnsupported
from dualrl.mdp import (Policy, TabularMdp, bandit, initial_pairs, lazy_chain, policy_transition_matrix, random_mdp,
                        single_state, swap_chain)
from dualrl.vlp import reps_objective_solve

seeds = st.integers(0, 10_000)


def test_q_values_fixtures():
    assert np.allclose(O.exact_q_values(single_state(), Policy.uniform(1, 1)), [2.0], atol=1e-12)
    # Hand solve: Q0 = 1 + Q1 / 2, Q1 = Q0 / 2.
    assert np.allclose(O.exact_q_values(swap_chain(), Policy.uniform(2, 1)), [4 / 3, 2 / 3], atol=1e-12)


@given(seeds)
def test_zero_reward_gives_zero_q(seed):
    mdp = random_mdp(3, 2, 0.9, seed).with_reward(np.zeros((3, 2)))
    assert np.all(O.exact_q_values(mdp, Policy.random(3, 2, seed)) == 0.0)


def test_visitation_fixtures():
    assert np.allclose(O.exact_visitation(single_state(), Policy.uniform(1, 1)), [1.0])
    assert np.allclose(O.exact_visitation(swap_chain(), Policy.uniform(2, 1)), [2 / 3, 1 / 3], atol=1e-12)


def test_visitation_small_discount_is_initial():
    mdp = random_mdp(4, 2, 0.01, 0)
    pi = Policy.random(4, 2, 3)
    d = O.exact_visitation(mdp, pi)
    assert np.max(np.abs(d - initial_pairs(mdp, pi))) < 0.02


def test_value_fixtures():
    assert O.exact_value(single_state(), Policy.uniform(1, 1)) == pytest.approx(1.0, abs=1e-12)
    assert O.exact_value(swap_chain(), Policy.uniform(2, 1)) == pytest.approx(2 / 3, abs=1e-12)


@given(seeds, st.floats(-5, 5))
def test_constant_reward_value(seed, c):
    mdp = random_mdp(3, 2, 0.9, seed).with_reward(np.full((3, 2), c))
    assert O.exact_value(mdp, Policy.random(3, 2, seed)) == pytest.approx(c, abs=1e-9)


@given(seeds, st.integers(1, 20), st.integers(1, 3), st.floats(0.05, 0.99))
def test_bellman_residuals_and_two_ways(seed, S, A, g):
    mdp = random_mdp(S, A, g, seed)
    pi = Policy.random(S, A, seed + 1)
    P = policy_transition_matrix(mdp, pi)
    q = O.exact_q_values(mdp, pi)
    d = O.exact_visitation(mdp, pi)
    assert np.max(np.abs(q - mdp.flat_reward - g * P @ q)) < 1e-9
    assert np.max(np.abs(d - (1 - g) * initial_pairs(mdp, pi) - g * P.T @ d)) < 1e-9
    assert abs(d.sum() - 1.0) < 1e-10 and np.all(d >= 0)
    via_q = (1 - g) * initial_pairs(mdp, pi) @ q
    assert abs(via_q - d @ mdp.flat_reward) < 1e-9


@given(seeds)
def test_visitation_ignores_reward(seed):
    mdp = random_mdp(3, 2, 0.9, seed)
    pi = Policy.random(3, 2, seed)
    other = mdp.with_reward(np.random.default_rng(seed).normal(size=(3, 2)))
    assert np.array_equal(O.exact_visitation(mdp, pi), O.exact_visitation(other, pi))


def test_undiscounted_rejected():
    with pytest.raises(UndiscountedUnsupported):
        O.exact_q_values(lazy_chain(), Policy.uniform(2, 1))
    with pytest.raises(UndiscountedUnsupported):
        O.exact_value(lazy_chain(), Policy.uniform(2, 1))


def _fd_gradient(mdp, logits, h=1e-5):
    out = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[idx] = h
        out[idx] = (O.exact_value(mdp, Policy.from_logits(logits + e)) -
                    O.exact_value(mdp, Policy.from_logits(logits - e))) / (2 * h)
    return out


def test_policy_gradient_single_action_is_zero():
    assert np.all(O.exact_policy_gradient(swap_chain(), np.zeros((2, 1))) == 0.0)


def test_policy_gradient_bandit_matches_finite_differences():
    mdp = bandit()
    logits = np.zeros((1, 2))
    assert np.max(np.abs(O.exact_policy_gradient(mdp, logits) - _fd_gradient(mdp, logits))) < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_policy_gradient_matches_finite_differences(seed):
    mdp = random_mdp(3, 2, 0.9, seed)
    logits = np.random.default_rng(seed).normal(size=(3, 2))
    assert np.max(np.abs(O.exact_policy_gradient(mdp, logits) - _fd_gradient(mdp, logits))) < 1e-6


def test_policy_gradient_saturated():
    mdp = random_mdp(3, 2, 0.9, 0)
    logits = np.zeros((3, 2))
    logits[:, 0] = 20.0
    g = O.exact_policy_gradient(mdp, logits)
    assert np.linalg.norm(g) < 1e-6
    assert np.max(np.abs(g - _fd_gradient(mdp, logits))) < 1e-6


def test_stationary_fixtures():
    assert np.allclose(O.exact_stationary(single_state(), Policy.uniform(1, 1)), [1.0])
    with pytest.raises(NotErgodic):
        O.exact_stationary(swap_chain(), Policy.uniform(2, 1))
    lazy2 = TabularMdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), [0.5, 0.5], 1.0)
    assert np.allclose(O.exact_stationary(lazy2, Policy.uniform(2, 2)), 0.25, atol=1e-12)


def test_reducible_chain_not_ergodic():
    T = np.zeros((2, 1, 2))
    T[0, 0, 0] = T[1, 0, 1] = 1.0
    with pytest.raises(NotErgodic):
        O.exact_stationary(TabularMdp(T, np.zeros((2, 1)), [0.5, 0.5], 1.0), Policy.uniform(2, 1))


@given(seeds, st.integers(1, 8), st.integers(1, 3))
def test_stationary_fixed_point(seed, S, A):
    mdp = random_mdp(S, A, 1.0, seed)
    pi = Policy.random(S, A, seed)
    d = O.exact_stationary(mdp, pi)
    P = policy_transition_matrix(mdp, pi)
    assert abs(d.sum() - 1) < 1e-12 and np.all(d >= 0)
    assert np.max(np.abs(P.T @ d - d)) < 1e-10


@settings(max_examples=20)
@given(seeds)
def test_stationary_is_discount_limit(seed):
    mdp = random_mdp(4, 2, 0.999, seed)
    pi = Policy.random(4, 2, seed)
    assert np.max(np.abs(O.exact_visitation(mdp, pi) - O.exact_stationary(mdp, pi))) < 0.01


# Generators with f(1) = 0, so D_f(d || d) = 0.
@pytest.mark.parametrize("gen", ["chisquare", "kl"])
def test_regularized_optimum_single_state(gen):
    d, value = O.exact_regularized_optimum(single_state(reward=0.7), np.array([1.0]), gen)
    assert np.allclose(d, [1.0]) and value == pytest.approx(0.7, abs=1e-10)


def test_regularized_optimum_matches_reps():
    mdp = random_mdp(2, 2, 0.8, 0)
    data = from_behavior(mdp, Policy.uniform(2, 2))
    _, value = O.exact_regularized_optimum(mdp, data, "kl")
    assert value == pytest.approx(reps_objective_solve(mdp, data).objective_value, abs=1e-5)


def test_square_single_state_pays_constant():
    d, value = O.exact_regularized_optimum(single_state(reward=0.7), np.array([1.0]), "square")
    assert np.allclose(d, [1.0]) and value == pytest.approx(0.2, abs=1e-10)


@pytest.mark.parametrize("gen", ["square", "chisquare", "kl"])
def test_regularized_optimum_zero_reward_returns_data(gen):
    mdp = random_mdp(3, 2, 0.8, 1).with_reward(np.zeros((3, 2)))
    data = from_behavior(mdp, Policy.random(3, 2, 5))
    d, value = O.exact_regularized_optimum(mdp, data, gen)
    f1 = 0.5 if gen == "square" else 0.0
    assert np.max(np.abs(d - data.weights)) < 1e-6 and abs(value + f1) < 1e-8


@pytest.mark.parametrize("gen", ["square", "kl"])
def test_regularized_optimum_feasible_and_better_than_policies(gen):
    mdp = random_mdp(3, 2, 0.8, 2)
    data = from_behavior(mdp, Policy.uniform(3, 2))
    d, value = O.exact_regularized_optimum(mdp, data, gen)
    A, b = O.flow_constraints(mdp)
    assert np.max(np.abs(A @ d - b)) < 1e-8 and np.all(d >= 0)
    for s in range(20):
        dp = O.exact_visitation(mdp, Policy.random(3, 2, s))
        assert O.regularized_objective(mdp, dp, data.weights, gen) <= value + 1e-9


def test_regularized_optimum_undiscounted_feasible():
    mdp = random_mdp(3, 2, 1.0, 0)
    data = from_weights(mdp, O.exact_stationary(mdp, Policy.uniform(3, 2)))
    d, _ = O.exact_regularized_optimum(mdp, data, "kl", mode="undiscounted")
    A, b = O.flow_constraints(mdp, undiscounted=True)
    assert np.max(np.abs(A @ d - b)) < 1e-8


def test_regularized_optimum_budget():
    mdp = random_mdp(33, 2, 0.9, 0)
    with pytest.raises(BudgetExceeded):
        O.exact_regularized_optimum(mdp, np.full(66, 1 / 66), "square")
