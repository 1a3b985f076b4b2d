import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exhaustive_dataset, random_mdp
from opesel import fqi, sepsis
from opesel.data import Dataset, generate, BehaviorSpec
from opesel.fqi import HyperGrid, fqi_tabular, soften
from opesel.mdp import TabularMDP, TabularPolicy, estimate_tabular_mdp
from opesel.nn import NetConfig


def truncated_vi(mdp: TabularMDP, horizon: int) -> np.ndarray:
    """Oracle: dense H-step Bellman-optimality backups from Q_0 = 0."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(horizon):
        q = mdp.reward + mdp.discount * np.einsum("sat,t->sa", mdp.transition, q.max(axis=1))
    return q


def test_soften():
    pi = TabularPolicy.deterministic(np.array([0, 3]), 8)
    assert soften(pi, 0.0).action_probs.tolist() == pi.action_probs.tolist()
    s = soften(pi, 0.01).action_probs
    assert s[1, 3] == pytest.approx(0.99) and s[1, 0] == pytest.approx(0.01 / 7)
    for eps in np.random.default_rng(0).random(20) * 0.99:
        np.testing.assert_allclose(soften(pi, eps).action_probs.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        soften(pi, 1.0)


def test_first_iterate_is_mean_reward(rng):
    mdp = random_mdp(rng, 4, 2, 0.9, reward_scale=0.1)
    data = exhaustive_dataset(mdp, rng, 20)
    np.testing.assert_allclose(fqi_tabular(data, 4, 2, 1, 0.9)[0].table, estimate_tabular_mdp(data, 4, 2).reward)


def test_deterministic_two_state_chain():
    rows = [(0, 1, 0, 0, 0.0, 0, False), (1, 1, 0, 1, 1.0, 1, True)]
    data = Dataset.from_transitions(rows, seed=0, behavior="hand", env="toy")
    qs = fqi_tabular(data, 2, 2, 5, 0.5)
    mle = estimate_tabular_mdp(data, 2, 2, 0.5)
    for h, q in enumerate(qs, start=1):
        np.testing.assert_allclose(q.table, truncated_vi(mle, h), atol=1e-9)
    assert qs[-1].table[0, 0] == pytest.approx(0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 7), st.integers(2, 4), st.floats(0.5, 0.99))
def test_tabular_fqi_is_truncated_value_iteration(seed, S, A, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S, A, gamma, reward_scale=1 - gamma)
    data = exhaustive_dataset(mdp, rng, 3)
    mle = estimate_tabular_mdp(data, S, A, gamma)
    for h, q in enumerate(fqi_tabular(data, S, A, 15, gamma), start=1):
        np.testing.assert_allclose(q.table, truncated_vi(mle, h), atol=1e-9)


def test_zero_rewards_give_zero_q(rng):
    mdp = random_mdp(rng, 4, 2, 0.9, reward_scale=0.0)
    for q in fqi_tabular(exhaustive_dataset(mdp, rng, 2), 4, 2, 4, 0.9):
        assert not q.table.any()


def test_targets_are_clipped():
    # a self-loop paying +1 would bootstrap past 1 without clipping
    rows = [(0, t, 0, 0, 1.0, 0, False) for t in range(1, 6)]
    data = Dataset.from_transitions(rows, seed=0, behavior="hand", env="toy")
    for q in fqi_tabular(data, 1, 1, 10, 0.99):
        assert q.table.max() <= 1.0


def test_neural_fqi_matches_tabular_on_one_hot_states(rng):
    mdp = random_mdp(rng, 4, 2, 0.8, reward_scale=0.2)
    data = exhaustive_dataset(mdp, rng, 40)
    eye = np.eye(4)
    nets = fqi.fqi_neural(data, lambda s: eye[s], 2, NetConfig(hidden_units=64, learning_rate=3e-3), 4, 0.8)
    tab = fqi_tabular(data, 4, 2, 4, 0.8)
    live = ~mdp.absorbing
    for h in (1, 2, 4):
        assert np.abs(nets[h].q_table(4)[live] - tab[h - 1].table[live]).max() < 0.05


def test_neural_fqi_zero_rewards(rng):
    mdp = random_mdp(rng, 3, 2, 0.9, reward_scale=0.0)
    data = exhaustive_dataset(mdp, rng, 30)
    eye = np.eye(3)
    nets = fqi.fqi_neural(data, lambda s: eye[s], 2, NetConfig(hidden_units=32), 2, 0.9)
    visited = np.unique(data.states)
    assert np.abs(nets[2].q_table(3)[visited]).max() < 1e-2


def test_full_grid_shape():
    grid = HyperGrid()
    assert grid.size == 96 and len(grid.runs()) == 16


@pytest.fixture(scope="module")
def tiny_candidates():
    env = sepsis.SepsisSimulator()
    data = generate(env, BehaviorSpec("uniform_random"), 60, seed=4)
    grid = HyperGrid(hidden_layers=(1,), hidden_units=(8,), learning_rate=(1e-3,), fqi_iterations=(1, 2))
    cfg = NetConfig(hidden_units=8, max_epochs=3)
    return env, data, grid, cfg, fqi.build_candidates(data, grid, 7, env.features, env.n_states, 8, 0.99, cfg)


def test_candidates_reuse_runs_and_are_deterministic(tiny_candidates):
    env, data, grid, cfg, cset = tiny_candidates
    assert cset.ids == ["nn-l1-u8-lr0.001-it1", "nn-l1-u8-lr0.001-it2"]
    again = fqi.build_candidates(data, grid, 7, env.features, env.n_states, 8, 0.99, cfg)
    for a, b in zip(cset, again):
        np.testing.assert_array_equal(a.actions, b.actions)


def test_manifest_round_trip(tiny_candidates, tmp_path):
    env, data, _, _, cset = tiny_candidates
    tab = fqi.build_tabular_candidates(data, [1, 3], env.n_states, 8, 0.99, [0.5, 0.99])
    assert tab.ids == ["tab-g0.5-it1", "tab-g0.5-it3", "tab-g0.99-it1", "tab-g0.99-it3"]
    for c in (cset, tab):
        path = fqi.save_candidates(c, tmp_path / c.ids[0], ["note"])
        back = fqi.load_candidates(path, env.features, env.n_states)
        assert back.ids == c.ids
        for a, b in zip(c, back):
            np.testing.assert_array_equal(a.actions, b.actions)
            assert a.record == b.record
