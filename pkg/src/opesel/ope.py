"""Off-policy estimators of a policy's value from a validation dataset.

Importance ratios use per-episode cumulative products laid out on an
``(m, T)`` grid, ``T`` the longest episode. Steps past an episode's end are
padded with ratio 1, so each episode keeps contributing its final cumulative
ratio to the per-horizon averages ``w_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .data import Dataset
from .fqi import RETURN_RANGE, NeuralQ, TabularQ, action_patterns, soften
from .mdp import TabularMDP, TabularPolicy, evaluate_policy_analytic
from .seeding import derive_seed


class UndefinedEstimateError(ValueError):
    """Every episode received zero importance weight."""


@dataclass
class OpeEstimate:
    value: float
    method: str
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def reported(self) -> float:
        return float(np.clip(self.value, *RETURN_RANGE))


# -- importance weights -------------------------------------------------------------


def _grid(dataset: Dataset, values: np.ndarray, pad: float) -> np.ndarray:
    starts = dataset.episode_starts
    lengths = dataset.episode_lengths
    T = int(lengths.max())
    out = np.full((starts.size, T), pad, dtype=np.float64)
    ep = np.repeat(np.arange(starts.size), lengths)
    out[ep, dataset.t - 1] = values
    return out


def _target_probs(policy: TabularPolicy, epsilon: float) -> TabularPolicy:
    if epsilon > 0:
        if not policy.is_deterministic():
            raise ValueError("softening requires a deterministic policy")
        return soften(policy, epsilon)
    return policy


def behavior_probs(dataset: Dataset, behavior: TabularPolicy | np.ndarray) -> np.ndarray:
    """Probability of each logged action under ``behavior``.

    ``behavior`` is a tabular policy or an ``(N, |A|)`` matrix of per-transition
    action probabilities (e.g. classifier output).
    """
    if isinstance(behavior, TabularPolicy):
        return behavior.action_probs[dataset.states, dataset.actions]
    behavior = np.asarray(behavior)
    if behavior.ndim == 2:
        return behavior[np.arange(dataset.n_transitions), dataset.actions]
    return behavior


def cumulative_ratios(dataset: Dataset, target: TabularPolicy, behavior: TabularPolicy | np.ndarray) -> np.ndarray:
    """``(m, T)`` grid of ``rho_{1:t}``, frozen after each episode's last step."""
    pb = behavior_probs(dataset, behavior)
    if np.any(pb <= 0):
        raise ValueError("behavior policy gives zero probability to a logged action")
    rho = target.action_probs[dataset.states, dataset.actions] / pb
    return np.cumprod(_grid(dataset, rho, 1.0), axis=1)


def wis(
    dataset: Dataset,
    policy: TabularPolicy,
    behavior: TabularPolicy | np.ndarray,
    epsilon: float = 0.01,
    discount: float = 0.99,
) -> OpeEstimate:
    """Weighted importance sampling.

    Each episode is weighted by its final cumulative ratio, normalised by the
    average of those ratios, so the estimate is a convex combination of the
    observed discounted returns.
    """
    target = _target_probs(policy, epsilon)
    final = cumulative_ratios(dataset, target, behavior)[:, -1]
    total = final.sum()
    if total <= 0:
        raise UndefinedEstimateError("all cumulative importance ratios are zero")
    returns = dataset.discounted_returns(discount)
    m = final.size
    w = total / m
    value = float(np.sum(final / w * returns) / m)
    ess = float(total**2 / np.sum(final**2))
    return OpeEstimate(
        value, "wis", {"epsilon": epsilon},
        {"ess": ess, "nonzero_episodes": int(np.count_nonzero(final)), "m": m},
    )


def per_decision_wis(
    dataset: Dataset, policy: TabularPolicy, behavior: TabularPolicy | np.ndarray, epsilon: float, discount: float
) -> float:
    """``(1/m) sum_j sum_t rho_{1:t} / w_t * gamma^(t-1) r_t``; the WDR estimate with a zero control variate."""
    target = _target_probs(policy, epsilon)
    cum = cumulative_ratios(dataset, target, behavior)
    w = cum.mean(axis=0)
    r = _grid(dataset, dataset.rewards, 0.0)
    disc = discount ** np.arange(cum.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, cum / w, 0.0) * disc * r
    return float(terms.sum() / cum.shape[0])


def wdr(
    dataset: Dataset,
    policy: TabularPolicy,
    behavior: TabularPolicy | np.ndarray,
    epsilon: float,
    qhat,
    discount: float = 0.99,
    method: str = "wdr",
) -> OpeEstimate:
    """Weighted doubly robust estimate with control variate ``qhat``.

    ``qhat`` maps state indices to ``(n, |A|)`` Q-values of the evaluated
    policy; the state value uses the softened policy. Horizons where the
    average weight ``w_t`` is zero are skipped and counted in diagnostics.
    """
    target = _target_probs(policy, epsilon)
    cum = cumulative_ratios(dataset, target, behavior)
    m, T = cum.shape
    w = cum.mean(axis=0)
    cum_prev = np.hstack([np.ones((m, 1)), cum[:, :-1]])
    w_prev = np.concatenate([[1.0], w[:-1]])

    q_rows = np.asarray(qhat(dataset.states), dtype=np.float64)
    q_sa = q_rows[np.arange(dataset.n_transitions), dataset.actions]
    v_s = np.sum(target.action_probs[dataset.states] * q_rows, axis=1)

    r = _grid(dataset, dataset.rewards, 0.0)
    Q = _grid(dataset, q_sa, 0.0)
    V = _grid(dataset, v_s, 0.0)
    valid = _grid(dataset, np.ones(dataset.n_transitions), 0.0) > 0
    disc = discount ** np.arange(T)

    ok_now, ok_prev = w > 0, w_prev > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        now = np.where(ok_now, cum / w, 0.0)
        prev = np.where(ok_prev, cum_prev / w_prev, 0.0)
    terms = now * disc * r - (now * Q - prev * V)
    terms = np.where(valid, terms, 0.0)
    skipped = int(np.count_nonzero(valid & ~(ok_now & ok_prev)))
    value = float(terms.sum() / m)
    return OpeEstimate(value, method, {"epsilon": epsilon}, {"skipped_terms": skipped, "m": m})


# -- approximate model ----------------------------------------------------------------


def am_tabular(models: TabularMDP, policy: TabularPolicy, init_states: np.ndarray | None = None) -> OpeEstimate:
    """Exact evaluation of ``policy`` in the estimated MDP.

    Averages over ``init_states`` when given, else over the model's
    estimated initial distribution.
    """
    vf = evaluate_policy_analytic(models, policy)
    if init_states is None:
        value = vf.scalar_value
    else:
        value = float(vf.v[np.asarray(init_states)].mean())
    return OpeEstimate(value, "am", {"horizon": "inf"}, {})


def am_q(models: TabularMDP, policy: TabularPolicy) -> TabularQ:
    return TabularQ(evaluate_policy_analytic(models, policy).q)


@dataclass
class AmModels:
    """Expected-change dynamics and reward regressors over ``[x(s), onehot(a)]``."""

    delta: nn.MLP
    reward: nn.MLP
    n_actions: int

    def inputs(self, X: np.ndarray, actions: np.ndarray) -> np.ndarray:
        onehot = np.eye(self.n_actions)[np.asarray(actions)]
        return np.hstack([X, onehot])


def fit_am_models(dataset: Dataset, featurize, n_actions: int, config: nn.NetConfig) -> AmModels:
    X = featurize(dataset.states)
    X2 = featurize(dataset.next_states)
    inp = np.hstack([X, np.eye(n_actions)[dataset.actions]])
    delta = nn.fit_regressor(nn.PatternSet(inp, X2 - X), config.with_seed(derive_seed(config.seed, 1) & 0x7FFFFFFF))
    reward = nn.fit_regressor(nn.PatternSet(inp, dataset.rewards), config.with_seed(derive_seed(config.seed, 2) & 0x7FFFFFFF))
    return AmModels(delta, reward, n_actions)


def am_rollout(
    models: AmModels,
    policy_fn: Callable[[np.ndarray], np.ndarray],
    horizon: int,
    init_features: np.ndarray,
    discount: float = 0.99,
) -> OpeEstimate:
    """Deterministic rollouts of the expected-dynamics model from each initial feature vector."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    X = np.array(init_features, dtype=np.float64, copy=True)
    total = np.zeros(X.shape[0])
    for t in range(horizon):
        a = np.asarray(policy_fn(X), dtype=np.int64)
        inp = models.inputs(X, a)
        total += discount**t * np.atleast_1d(nn.predict(models.reward, inp))
        X = X + nn.predict(models.delta, inp)
    return OpeEstimate(float(total.mean()), "am", {"horizon": horizon}, {"rollouts": int(X.shape[0])})


def greedy_feature_policy(q: NeuralQ) -> Callable[[np.ndarray], np.ndarray]:
    return lambda X: np.argmax(q.on_features(X), axis=1)


# -- behavior classifier --------------------------------------------------------------


def fit_behavior_classifier(dataset: Dataset, featurize, n_actions: int, config: nn.NetConfig) -> nn.MLP:
    X = featurize(dataset.states)
    return nn.fit_classifier(nn.PatternSet(X, dataset.actions), config, n_classes=n_actions)


def classifier_behavior(model: nn.MLP, dataset: Dataset, featurize) -> np.ndarray:
    """``(N, |A|)`` behavior probabilities for every logged state."""
    return nn.predict(model, featurize(dataset.states))


# -- FQE ----------------------------------------------------------------------------------


def _initial_value(dataset: Dataset, policy: TabularPolicy, q) -> float:
    s1 = dataset.initial_states
    return float(np.mean(np.sum(policy.action_probs[s1] * q(s1), axis=1)))


def fqe_tabular(
    dataset: Dataset, policy: TabularPolicy, horizon: int = 20, discount: float = 0.99
) -> tuple[TabularQ, OpeEstimate]:
    """Tabular FQE: each iterate is the per-(s, a) mean of clipped policy-expectation targets."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_states, n_actions = policy.action_probs.shape
    sa = dataset.states * n_actions + dataset.actions
    counts = np.bincount(sa, minlength=n_states * n_actions).astype(float)
    seen = counts > 0
    boot = discount * (~dataset.dones)
    pi_next = policy.action_probs[dataset.next_states]
    q = np.zeros((n_states, n_actions))
    residual = 0.0
    for _ in range(horizon):
        y = np.clip(dataset.rewards + boot * np.sum(pi_next * q[dataset.next_states], axis=1), *RETURN_RANGE)
        flat = np.zeros(n_states * n_actions)
        flat[seen] = np.bincount(sa, weights=y, minlength=n_states * n_actions)[seen] / counts[seen]
        q_new = flat.reshape(n_states, n_actions)
        residual = float(np.sqrt(np.mean((q_new[dataset.states, dataset.actions] - q[dataset.states, dataset.actions]) ** 2)))
        q = q_new
    qf = TabularQ(q)
    est = OpeEstimate(_initial_value(dataset, policy, qf), "fqe", {"horizon": horizon}, {"last_update_rms": residual})
    return qf, est


def fqe_neural(
    dataset: Dataset,
    policy: TabularPolicy,
    featurize,
    horizon: int,
    config: nn.NetConfig,
    discount: float = 0.99,
) -> tuple[NeuralQ, OpeEstimate]:
    """Neural FQE with a fresh network per iteration (seeded by ``(config.seed, h)``)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_actions = policy.n_actions
    X = featurize(dataset.states)
    X_next = featurize(dataset.next_states)
    boot = discount * (~dataset.dones)
    pi_next = policy.action_probs[dataset.next_states]
    q_next = np.zeros((dataset.n_transitions, n_actions))
    qf = None
    for h in range(1, horizon + 1):
        y = np.clip(dataset.rewards + boot * np.sum(pi_next * q_next, axis=1), *RETURN_RANGE)
        cfg = config.with_seed(derive_seed(config.seed, h) & 0x7FFFFFFF)
        model = nn.fit_regressor(action_patterns(X, dataset.actions, y, n_actions), cfg)
        qf = NeuralQ(model, featurize)
        q_next = qf.on_features(X_next)
    est = OpeEstimate(
        _initial_value(dataset, policy, qf), "fqe", {"horizon": horizon},
        {"final_td_loss": float(qf.model.history.get("best_val_loss", math.nan))},
    )
    return qf, est


def fqe(
    dataset: Dataset,
    policy: TabularPolicy,
    horizon: int = 20,
    config: nn.NetConfig | None = None,
    discount: float = 0.99,
    featurize=None,
):
    """Tabular FQE when ``config`` is None, neural otherwise."""
    if config is None:
        return fqe_tabular(dataset, policy, horizon, discount)
    if featurize is None:
        raise ValueError("neural FQE needs a featurizer")
    return fqe_neural(dataset, policy, featurize, horizon, config, discount)


# -- baseline scores ----------------------------------------------------------------------


def fqi_value_score(policy: TabularPolicy, q, init_states: np.ndarray) -> OpeEstimate:
    """Mean of ``sum_a pi(a|s1) Q_FQI(s1, a)`` over validation initial states."""
    s1 = np.asarray(init_states)
    value = float(np.mean(np.sum(policy.action_probs[s1] * q(s1), axis=1)))
    return OpeEstimate(value, "fqi_value", {}, {})


def rms_tde(dataset: Dataset, policy: TabularPolicy, qhat, discount: float = 0.99) -> float:
    """Root-mean-squared TD error of ``qhat`` under ``policy``; done transitions bootstrap 0."""
    q_s = np.asarray(qhat(dataset.states))[np.arange(dataset.n_transitions), dataset.actions]
    v_next = np.sum(policy.action_probs[dataset.next_states] * np.asarray(qhat(dataset.next_states)), axis=1)
    delta = dataset.rewards + discount * (~dataset.dones) * v_next - q_s
    return float(np.sqrt(np.mean(delta**2)))
