import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exhaustive_dataset, random_mdp
from opesel.data import Dataset
from opesel.mdp import (
    ConvergenceError,
    EvaluationInfeasible,
    TabularMDP,
    TabularPolicy,
    estimate_tabular_behavior,
    estimate_tabular_mdp,
    evaluate_policy_analytic,
    evaluate_policy_iterative,
    value_iteration,
)


def dense_solve(mdp, probs):
    """Oracle: full-system solve including absorbing states (valid for gamma < 1)."""
    P = np.einsum("sa,sat->st", probs, mdp.transition)
    r = np.sum(probs * mdp.reward, axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P, r)


def ds(rows):
    return Dataset.from_transitions(rows, seed=0, behavior="hand", env="toy")


def test_single_absorbing_state_is_zero():
    mdp = TabularMDP(np.ones((1, 2, 1)), np.zeros((1, 2)), np.ones(1), 0.9, np.array([True]))
    assert evaluate_policy_analytic(mdp, TabularPolicy.uniform(1, 2)).scalar_value == 0.0


def test_two_state_chain():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    R = np.array([[1.0], [0.0]])
    mdp = TabularMDP(P, R, np.array([1.0, 0.0]), 0.5, np.array([False, True]))
    vf = evaluate_policy_analytic(mdp, TabularPolicy.uniform(2, 1))
    assert vf.scalar_value == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(vf.q, [[1.0], [0.0]])


def test_analytic_matches_dense_solve_and_long_iteration(rng):
    mdp = random_mdp(rng, 5, 3, 0.9)
    pi = TabularPolicy(rng.dirichlet(np.ones(3), size=5))
    vf = evaluate_policy_analytic(mdp, pi)
    np.testing.assert_allclose(vf.v, dense_solve(mdp, pi.action_probs), atol=1e-12)
    it = evaluate_policy_iterative(mdp, pi, 500)
    np.testing.assert_allclose(vf.v, it.v, atol=1e-6)
    # q is consistent with v
    np.testing.assert_allclose(np.sum(pi.action_probs * vf.q, axis=1), vf.v, atol=1e-12)


def test_undiscounted_recurrent_chain_is_infeasible():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    mdp = TabularMDP(P, np.ones((2, 1)), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(EvaluationInfeasible):
        evaluate_policy_analytic(mdp, TabularPolicy.uniform(2, 1))


def test_undiscounted_absorbing_chain_is_feasible():
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    R = np.array([[0.5], [0.25], [0.0]])
    mdp = TabularMDP(P, R, np.array([1.0, 0, 0]), 1.0, np.array([False, False, True]))
    assert evaluate_policy_analytic(mdp, TabularPolicy.uniform(3, 1)).scalar_value == pytest.approx(0.75)


def test_iterative_horizons(rng):
    mdp = random_mdp(rng, 4, 2, 0.9)
    pi = TabularPolicy.uniform(4, 2)
    assert np.all(evaluate_policy_iterative(mdp, pi, 0).v == 0)
    np.testing.assert_allclose(evaluate_policy_iterative(mdp, pi, 1).v, np.sum(pi.action_probs * mdp.reward, axis=1))


def test_three_state_chain_truncation_bound():
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, 0, 0], P[1, 1, 2] = 1.0, 1.0
    P[2, :, 2] = 1.0
    R = np.array([[1.0, -1.0], [0.5, 1.0], [0.0, 0.0]])
    mdp = TabularMDP(P, R, np.array([1.0, 0, 0]), 0.9, np.array([False, False, True]))
    pi = TabularPolicy(np.array([[0.5, 0.5], [0.7, 0.3], [1.0, 0.0]]))
    gap = np.abs(evaluate_policy_analytic(mdp, pi).v - evaluate_policy_iterative(mdp, pi, 50).v).max()
    assert gap <= 0.9**50 / (1 - 0.9) * 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(1, 3), st.floats(0.3, 0.95))
def test_value_iteration_beats_every_deterministic_policy(seed, S, A, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S, A, gamma)
    q, greedy = value_iteration(mdp, tolerance=1e-10)
    best = np.max([dense_solve(mdp, TabularPolicy.deterministic(np.array(acts), A).action_probs)
                   for acts in itertools.product(range(A), repeat=S)], axis=0)
    np.testing.assert_allclose(q.max(axis=1), best, atol=1e-8)
    np.testing.assert_allclose(evaluate_policy_analytic(mdp, greedy).v, best, atol=1e-8)


def test_value_iteration_single_action_equals_evaluation(rng):
    mdp = random_mdp(rng, 5, 1, 0.8)
    q, _ = value_iteration(mdp, tolerance=1e-12)
    np.testing.assert_allclose(q[:, 0], evaluate_policy_analytic(mdp, TabularPolicy.uniform(5, 1)).v, atol=1e-10)


def test_value_iteration_dominant_action_and_ties():
    P = np.zeros((2, 3, 2))
    P[:, :, 1] = 1.0
    R = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    mdp = TabularMDP(P, R, np.array([1.0, 0.0]), 0.9, np.array([False, True]))
    _, pi = value_iteration(mdp)
    assert pi.greedy_actions.tolist() == [1, 0]  # tie between 1 and 2 goes to 1


def test_value_iteration_beats_random_policies(rng):
    mdp = random_mdp(rng, 6, 3, 0.9)
    _, greedy = value_iteration(mdp)
    v_star = evaluate_policy_analytic(mdp, greedy).scalar_value
    for _ in range(100):
        pi = TabularPolicy(rng.dirichlet(np.ones(3), size=6))
        assert evaluate_policy_analytic(mdp, pi).scalar_value <= v_star + 1e-12


def test_value_iteration_reports_nonconvergence(rng):
    mdp = random_mdp(rng, 4, 2, 0.99)
    with pytest.raises(ConvergenceError) as err:
        value_iteration(mdp, tolerance=1e-12, max_iter=3)
    assert err.value.residual > 0


def test_validate_rejects_bad_rows(rng):
    mdp = random_mdp(rng, 3, 2, 0.9)
    mdp.validate()
    P = mdp.transition.copy()
    P[0, 0, 0] += 0.1
    with pytest.raises(ValueError):
        TabularMDP(P, mdp.reward, mdp.initial_dist, 0.9, mdp.absorbing).validate()


def test_estimate_single_transition():
    m = estimate_tabular_mdp(ds([(0, 1, 0, 1, -1.0, 2, True)]), 4, 2)
    assert m.transition[0, 1, 2] == 1.0 and m.reward[0, 1] == -1.0
    # unseen pair falls back to a zero-reward self-loop; states never left are absorbing
    assert m.transition[0, 0, 0] == 1.0 and m.reward[0, 0] == 0.0
    assert m.absorbing.tolist() == [False, True, True, True]
    m.validate()


def test_estimate_counts_split_evenly():
    m = estimate_tabular_mdp(ds([(0, 1, 0, 1, 0.0, 2, True), (1, 1, 0, 1, 0.0, 3, True)]), 4, 2)
    assert m.transition[0, 1, 2] == m.transition[0, 1, 3] == 0.5
    assert m.initial_dist[0] == 1.0


def test_estimate_all_unseen_gives_zero_value():
    m = estimate_tabular_mdp(ds([(0, 1, 0, 0, 0.0, 1, True)]), 3, 2)
    assert evaluate_policy_analytic(m, TabularPolicy.uniform(3, 2)).scalar_value == 0.0


def test_estimate_converges_on_exhaustive_data(rng):
    mdp = random_mdp(rng, 4, 2, 0.9)
    m = estimate_tabular_mdp(exhaustive_dataset(mdp, rng, 4000), 4, 2, 0.9)
    live = ~mdp.absorbing
    tv = 0.5 * np.abs(m.transition[live] - mdp.transition[live]).sum(axis=2)
    assert tv.max() < 0.05
    np.testing.assert_allclose(m.reward[live], mdp.reward[live])


def test_behavior_estimate():
    rows = [(0, 1, 0, 3, 0.0, 1, False), (0, 2, 1, 0, 0.0, 1, False), (0, 3, 1, 0, 0.0, 1, False),
            (0, 4, 1, 1, 0.0, 1, False), (0, 5, 1, 1, 0.0, 2, True)]
    b = estimate_tabular_behavior(ds(rows), 3, 4)
    assert b.action_probs[0, 3] == 1.0
    np.testing.assert_allclose(b.action_probs[1], [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(b.action_probs[2], 0.25)
