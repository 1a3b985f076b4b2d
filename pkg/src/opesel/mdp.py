"""Finite MDPs: exact/truncated policy evaluation, value iteration, and
count-based estimation of models and behavior policies from logged data.

Array conventions: ``transition[s, a, s']``, ``reward[s, a]``,
``action_probs[s, a]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

ROW_ATOL = 1e-9


class EvaluationInfeasible(ValueError):
    """The policy-induced linear system has no unique solution."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float
    absorbing: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.absorbing is None:
            object.__setattr__(self, "absorbing", np.zeros(self.transition.shape[0], dtype=bool))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def flat_transition(self) -> sp.csr_matrix:
        """Sparse ``(S*A, S)`` view of the transition tensor for fast backups."""
        S, A = self.n_states, self.n_actions
        return sp.csr_matrix(self.transition.reshape(S * A, S))

    def validate(self, atol: float = ROW_ATOL) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        S, A = self.n_states, self.n_actions
        if self.transition.shape != (S, A, S) or self.reward.shape != (S, A):
            raise ValueError("inconsistent shapes")
        if np.any(self.transition < -atol) or np.any(self.transition > 1 + atol):
            raise ValueError("transition probabilities outside [0, 1]")
        rows = self.transition.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > atol:
            raise ValueError(f"transition rows do not sum to 1 (max dev {np.max(np.abs(rows - 1)):.2e})")
        if abs(self.initial_dist.sum() - 1.0) > atol or np.any(self.initial_dist < 0):
            raise ValueError("initial_dist is not a distribution")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount outside [0, 1]")
        for s in np.flatnonzero(self.absorbing):
            if np.any(np.abs(self.transition[s, :, s] - 1.0) > atol) or np.any(self.reward[s] != 0):
                raise ValueError(f"absorbing state {s} is not a zero-reward self-loop")


@dataclass(frozen=True)
class TabularPolicy:
    action_probs: np.ndarray

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_probs.shape[1]

    @property
    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.action_probs, axis=1)

    def is_deterministic(self) -> bool:
        return bool(np.all((self.action_probs == 0) | (self.action_probs == 1)))


@dataclass(frozen=True)
class ValueFunctions:
    v: np.ndarray
    q: np.ndarray
    scalar_value: float


def _q_from_v(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * (mdp.flat_transition @ v).reshape(mdp.n_states, mdp.n_actions)


def policy_matrices(mdp: TabularMDP, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Return the policy-induced chain ``P_pi[s, s']`` and reward ``r_pi[s]``."""
    pi = policy.action_probs
    S, A = pi.shape
    mix = sp.csr_matrix((pi.reshape(-1), (np.repeat(np.arange(S), A), np.arange(S * A))), shape=(S, S * A))
    p_pi = (mix @ mdp.flat_transition).toarray()
    r_pi = np.sum(pi * mdp.reward, axis=1)
    return p_pi, r_pi


def _reaches_absorbing(p_pi: np.ndarray, absorbing: np.ndarray) -> np.ndarray:
    reach = absorbing.copy()
    adj = p_pi > 0
    while True:
        new = reach | adj[:, reach].any(axis=1)
        if np.array_equal(new, reach):
            return reach
        reach = new


def evaluate_policy_analytic(mdp: TabularMDP, policy: TabularPolicy) -> ValueFunctions:
    """Solve ``(I - gamma P_pi) v = r_pi`` on the non-absorbing states."""
    p_pi, r_pi = policy_matrices(mdp, policy)
    live = ~mdp.absorbing
    if mdp.discount >= 1.0:
        reach = _reaches_absorbing(p_pi, mdp.absorbing)
        if not reach.all():
            stuck = np.flatnonzero(~reach)
            raise EvaluationInfeasible(
                f"undiscounted chain never absorbs from {stuck.size} state(s), e.g. {stuck[:5].tolist()}"
            )
    v = np.zeros(mdp.n_states)
    idx = np.flatnonzero(live)
    if idx.size:
        system = np.eye(idx.size) - mdp.discount * p_pi[np.ix_(idx, idx)]
        try:
            v[idx] = np.linalg.solve(system, r_pi[idx])
        except np.linalg.LinAlgError as exc:
            raise EvaluationInfeasible(str(exc)) from exc
    q = _q_from_v(mdp, v)
    return ValueFunctions(v=v, q=q, scalar_value=float(mdp.initial_dist @ v))


def evaluate_policy_iterative(mdp: TabularMDP, policy: TabularPolicy, horizon: int) -> ValueFunctions:
    """H-step truncated evaluation: ``v_H = r_pi + gamma P_pi v_{H-1}``, ``v_0 = 0``."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    v = np.zeros(mdp.n_states)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(horizon):
        q = _q_from_v(mdp, v)
        v = np.sum(policy.action_probs * q, axis=1)
    return ValueFunctions(v=v, q=q, scalar_value=float(mdp.initial_dist @ v))


def greedy_policy(q: np.ndarray) -> TabularPolicy:
    # np.argmax returns the first maximiser, i.e. ties go to the lowest action index
    return TabularPolicy.deterministic(np.argmax(q, axis=1), q.shape[1])


def value_iteration(
    mdp: TabularMDP, tolerance: float = 1e-8, max_iter: int = 100_000
) -> tuple[np.ndarray, TabularPolicy]:
    """Optimal Q by Bellman-optimality iteration.

    Iterates until the Bellman residual is below ``tolerance * (1 - gamma)``,
    which bounds the sup-norm distance to Q* by ``tolerance``. Raises
    ``ConvergenceError`` after ``max_iter`` sweeps.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    stop = tolerance * (1.0 - mdp.discount) if mdp.discount < 1.0 else tolerance
    q = np.zeros((mdp.n_states, mdp.n_actions))
    residual = np.inf
    for _ in range(max_iter):
        q_new = _q_from_v(mdp, q.max(axis=1))
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual <= stop:
            return q, greedy_policy(q)
    raise ConvergenceError("value iteration did not converge", residual)


def estimate_tabular_mdp(dataset, n_states: int, n_actions: int, discount: float = 0.99) -> TabularMDP:
    """Count-based maximum-likelihood model.

    Unseen (s, a) pairs become zero-reward self-loops; states never seen as a
    source are flagged absorbing.
    """
    s, a, r, s2 = dataset.states, dataset.actions, dataset.rewards, dataset.next_states
    if s.size == 0:
        raise ValueError("empty dataset")
    counts = np.zeros((n_states, n_actions, n_states))
    np.add.at(counts, (s, a, s2), 1.0)
    sa = counts.sum(axis=2)
    rsum = np.zeros((n_states, n_actions))
    np.add.at(rsum, (s, a), r)

    seen = sa > 0
    transition = np.zeros_like(counts)
    transition[seen] = counts[seen] / sa[seen][:, None]
    unseen_s, unseen_a = np.nonzero(~seen)
    transition[unseen_s, unseen_a, unseen_s] = 1.0
    reward = np.zeros((n_states, n_actions))
    reward[seen] = rsum[seen] / sa[seen]

    init = np.bincount(dataset.initial_states, minlength=n_states).astype(float)
    init /= init.sum()
    absorbing = ~seen.any(axis=1)
    return TabularMDP(transition, reward, init, discount, absorbing)


def estimate_tabular_behavior(dataset, n_states: int, n_actions: int) -> TabularPolicy:
    """``count(s, a) / count(s)``; states never visited get uniform rows."""
    if dataset.states.size == 0:
        raise ValueError("empty dataset")
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (dataset.states, dataset.actions), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, counts / np.maximum(totals, 1.0), 1.0 / n_actions)
    return TabularPolicy(probs)
