import numpy as np
import pytest

from opesel.data import Dataset
from opesel.mdp import TabularMDP

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def random_mdp(rng, n_states, n_actions, discount, n_absorbing=1, reward_scale=1.0, density=0.6):
    """Random MDP whose last ``n_absorbing`` states are zero-reward self-loops."""
    S, A = n_states, n_actions
    P = rng.random((S, A, S)) * (rng.random((S, A, S)) < density)
    P[:, :, S - 1] += 0.05  # every live pair can reach an absorbing state
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1, 1, (S, A)) * reward_scale
    absorbing = np.zeros(S, dtype=bool)
    absorbing[S - n_absorbing:] = True
    for s in np.flatnonzero(absorbing):
        P[s] = 0.0
        P[s, :, s] = 1.0
        R[s] = 0.0
    mu0 = np.zeros(S)
    mu0[: S - n_absorbing] = rng.dirichlet(np.ones(S - n_absorbing))
    return TabularMDP(P, R, mu0, discount, absorbing)


def exhaustive_dataset(mdp: TabularMDP, rng, reps: int) -> Dataset:
    """``reps`` one-step episodes from every live (s, a); done when the successor is absorbing."""
    rows, ep = [], 0
    for s in np.flatnonzero(~mdp.absorbing):
        for a in range(mdp.n_actions):
            for _ in range(reps):
                s2 = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
                rows.append((ep, 1, int(s), a, float(mdp.reward[s, a]), s2, bool(mdp.absorbing[s2])))
                ep += 1
    return Dataset.from_transitions(rows, seed=0, behavior="exhaustive", env="toy")


def simulate(mdp: TabularMDP, policy_probs, m, rng, max_len=30) -> Dataset:
    """Roll out ``m`` episodes; done on entering an absorbing state."""
    rows = []
    S, A = mdp.n_states, mdp.n_actions
    for j in range(m):
        s = int(rng.choice(S, p=mdp.initial_dist))
        for t in range(1, max_len + 1):
            a = int(rng.choice(A, p=policy_probs[s]))
            s2 = int(rng.choice(S, p=mdp.transition[s, a]))
            done = bool(mdp.absorbing[s2])
            rows.append((j, t, s, a, float(mdp.reward[s, a]), s2, done))
            if done:
                break
            s = s2
    return Dataset.from_transitions(rows, seed=0, behavior="sim", env="toy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
