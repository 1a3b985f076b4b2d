"""Fitted Q iteration and candidate-policy construction.

Bootstrapped targets are clipped to the return range ``[-1, 1]``; transitions
with ``done`` do not bootstrap. Neural Q-networks take state features and
emit one output per action, trained only on the output of the logged action.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .data import Dataset, atomic_write
from .mdp import TabularPolicy
from .seeding import derive_seed

RETURN_RANGE = (-1.0, 1.0)

Featurizer = Callable[[np.ndarray], np.ndarray]


class TabularQ:
    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return self.table[np.asarray(states)]

    def q_table(self, n_states: int | None = None) -> np.ndarray:
        return self.table

    def greedy(self, n_states: int | None = None) -> TabularPolicy:
        return TabularPolicy.deterministic(np.argmax(self.table, axis=1), self.table.shape[1])


class NeuralQ:
    """Q-network over state features; ``featurize`` maps state indices to features."""

    def __init__(self, model: nn.MLP, featurize: Featurizer):
        self.model = model
        self.featurize = featurize

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return self.on_features(self.featurize(np.asarray(states)))

    def on_features(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(nn.predict(self.model, X))

    def q_table(self, n_states: int) -> np.ndarray:
        return self(np.arange(n_states))

    def greedy(self, n_states: int) -> TabularPolicy:
        q = self.q_table(n_states)
        return TabularPolicy.deterministic(np.argmax(q, axis=1), q.shape[1])


class ZeroQ:
    """Q-function that is identically zero (initial iterate)."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return np.zeros((np.asarray(states).size, self.n_actions))

    def q_table(self, n_states: int) -> np.ndarray:
        return np.zeros((n_states, self.n_actions))


def soften(policy: TabularPolicy | np.ndarray, epsilon: float, n_actions: int | None = None) -> TabularPolicy:
    """``1 - eps`` on the greedy action and ``eps / (|A| - 1)`` on every other action."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    if isinstance(policy, TabularPolicy):
        actions, n_actions = policy.greedy_actions, policy.n_actions
    else:
        actions = np.asarray(policy, dtype=np.int64)
        if n_actions is None:
            raise ValueError("n_actions is required for an action array")
    if n_actions < 2:
        return TabularPolicy.deterministic(actions, n_actions)
    probs = np.full((actions.size, n_actions), epsilon / (n_actions - 1))
    probs[np.arange(actions.size), actions] = 1.0 - epsilon
    return TabularPolicy(probs)


def _clip(y: np.ndarray) -> np.ndarray:
    return np.clip(y, *RETURN_RANGE)


def _tabular_regression(dataset: Dataset, n_states: int, n_actions: int):
    sa = dataset.states * n_actions + dataset.actions
    counts = np.bincount(sa, minlength=n_states * n_actions).astype(float)
    seen = counts > 0

    def fit(targets: np.ndarray) -> np.ndarray:
        sums = np.bincount(sa, weights=targets, minlength=n_states * n_actions)
        q = np.zeros(n_states * n_actions)
        q[seen] = sums[seen] / counts[seen]
        return q.reshape(n_states, n_actions)

    return fit


def fqi_tabular(dataset: Dataset, n_states: int, n_actions: int, horizon: int, discount: float) -> list[TabularQ]:
    """Tabular FQI; element ``h-1`` of the result is the iterate after ``h`` steps.

    Each iterate is the per-(s, a) mean of the clipped targets; unseen pairs stay 0.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    fit = _tabular_regression(dataset, n_states, n_actions)
    boot = discount * (~dataset.dones)
    q = np.zeros((n_states, n_actions))
    out = []
    for _ in range(horizon):
        y = _clip(dataset.rewards + boot * q[dataset.next_states].max(axis=1))
        q = fit(y)
        out.append(TabularQ(q))
    return out


def action_patterns(features: np.ndarray, actions: np.ndarray, targets: np.ndarray, n_actions: int) -> nn.PatternSet:
    """Multi-output pattern set with the loss restricted to the logged action."""
    n = actions.size
    Y = np.zeros((n, n_actions))
    M = np.zeros((n, n_actions))
    Y[np.arange(n), actions] = targets
    M[np.arange(n), actions] = 1.0
    return nn.PatternSet(features, Y, M)


def fqi_neural(
    dataset: Dataset,
    featurize: Featurizer,
    n_actions: int,
    config: nn.NetConfig,
    iterations: int,
    discount: float,
    checkpoints: Sequence[int] | None = None,
) -> dict[int, NeuralQ]:
    """Neural FQI; each iteration fits a fresh network seeded by ``(config.seed, h)``.

    Returns the networks at the requested iteration counts (all by default).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    keep = set(range(1, iterations + 1) if checkpoints is None else checkpoints)
    X = featurize(dataset.states)
    X_next = featurize(dataset.next_states)
    boot = discount * (~dataset.dones)
    q_next = np.zeros((dataset.n_transitions, n_actions))
    out: dict[int, NeuralQ] = {}
    for h in range(1, iterations + 1):
        y = _clip(dataset.rewards + boot * q_next.max(axis=1))
        cfg = config.with_seed(derive_seed(config.seed, h) & 0x7FFFFFFF)
        model = nn.fit_regressor(action_patterns(X, dataset.actions, y, n_actions), cfg)
        qf = NeuralQ(model, featurize)
        if h in keep:
            out[h] = qf
        q_next = qf.on_features(X_next)
    return out


# -- candidate sets ---------------------------------------------------------------


@dataclass(frozen=True)
class HyperGrid:
    hidden_layers: tuple[int, ...] = (1, 2)
    hidden_units: tuple[int, ...] = (100, 200, 500, 1000)
    learning_rate: tuple[float, ...] = (1e-3, 1e-4)
    fqi_iterations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)

    @property
    def size(self) -> int:
        return len(self.hidden_layers) * len(self.hidden_units) * len(self.learning_rate) * len(self.fqi_iterations)

    def runs(self) -> list[tuple[int, int, float]]:
        return list(itertools.product(self.hidden_layers, self.hidden_units, self.learning_rate))


@dataclass
class Candidate:
    policy_id: str
    policy: TabularPolicy
    record: dict
    checkpoint: int
    q: object = field(repr=False, default=None)

    @property
    def actions(self) -> np.ndarray:
        return self.policy.greedy_actions


@dataclass
class CandidateSet:
    candidates: list[Candidate]
    seed: int = 0
    dataset_label: str = ""

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i) -> Candidate:
        return self.candidates[i]

    @property
    def ids(self) -> list[str]:
        return [c.policy_id for c in self.candidates]


def build_candidates(
    dataset: Dataset,
    grid: HyperGrid,
    seed: int,
    featurize: Featurizer,
    n_states: int,
    n_actions: int,
    discount: float,
    base_config: nn.NetConfig | None = None,
) -> CandidateSet:
    """One greedy policy per grid point.

    Each (layers, units, learning rate) combination is trained once for the
    largest iteration count; the smaller counts are read off the same run.
    """
    base = base_config or nn.NetConfig()
    top = max(grid.fqi_iterations)
    cands = []
    for k, (layers, units, lr) in enumerate(grid.runs()):
        cfg = nn.NetConfig(**{**asdict(base), "hidden_layers": layers, "hidden_units": units,
                              "learning_rate": lr, "seed": derive_seed(seed, k) & 0x7FFFFFFF})
        nets = fqi_neural(dataset, featurize, n_actions, cfg, top, discount, grid.fqi_iterations)
        for it in sorted(grid.fqi_iterations):
            rec = {"hidden_layers": layers, "hidden_units": units, "learning_rate": lr, "fqi_iterations": it}
            pid = f"nn-l{layers}-u{units}-lr{lr:g}-it{it}"
            cands.append(Candidate(pid, nets[it].greedy(n_states), rec, it, nets[it]))
    return CandidateSet(cands, seed, f"{dataset.env}/{dataset.behavior}/seed={dataset.seed}")


def build_tabular_candidates(
    dataset: Dataset,
    iterations: Sequence[int],
    n_states: int,
    n_actions: int,
    discount: float,
    train_discounts: Sequence[float] | None = None,
) -> CandidateSet:
    """Greedy policies read off tabular FQI runs at the given iteration counts.

    One run per training discount (default: just ``discount``); candidates are
    ordered by discount, then iteration count.
    """
    cands = []
    for g in train_discounts or (discount,):
        qs = fqi_tabular(dataset, n_states, n_actions, max(iterations), g)
        for it in sorted(set(iterations)):
            q = qs[it - 1]
            rec = {"discount": g, "fqi_iterations": it}
            cands.append(Candidate(f"tab-g{g:g}-it{it}", q.greedy(), rec, it, q))
    return CandidateSet(cands, dataset.seed, f"{dataset.env}/{dataset.behavior}/seed={dataset.seed}")


# -- manifest ----------------------------------------------------------------------

MANIFEST_TAG = "# opesel-candidates v1"


def save_candidates(cset: CandidateSet, directory: str | os.PathLike, header_comments: Sequence[str] = ()) -> Path:
    """Write model files plus ``manifest.tsv``: ``policy_id, checkpoint, model file, record JSON``."""
    directory = Path(directory)
    (directory / "models").mkdir(parents=True, exist_ok=True)
    lines = [f"{MANIFEST_TAG}; seed={cset.seed}; dataset={cset.dataset_label}; k={len(cset)}"]
    lines += [f"# {c}" for c in header_comments]
    for c in cset:
        if isinstance(c.q, NeuralQ):
            rel = f"models/{c.policy_id}.npz"
            nn.save_model(c.q.model, directory / rel)
        else:
            rel = f"models/{c.policy_id}.npy"
            table = c.q.table if isinstance(c.q, TabularQ) else c.policy.action_probs
            tmp = directory / (rel + ".tmp.npy")
            np.save(tmp, table)
            os.replace(tmp, directory / rel)
        lines.append("\t".join([c.policy_id, str(c.checkpoint), rel, json.dumps(c.record, sort_keys=True)]))
    path = directory / "manifest.tsv"
    atomic_write(path, "\n".join(lines) + "\n")
    return path


def load_candidates(manifest: str | os.PathLike, featurize: Featurizer, n_states: int) -> CandidateSet:
    manifest = Path(manifest)
    root = manifest.parent
    lines = manifest.read_text().splitlines()
    if not lines or not lines[0].startswith(MANIFEST_TAG):
        raise ValueError(f"{manifest}: line 1: not a candidate manifest")
    meta = dict(kv.split("=", 1) for kv in lines[0][len(MANIFEST_TAG) + 2 :].split("; "))
    cands = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            pid, ckpt, rel, rec = line.split("\t")
            record = json.loads(rec)
        except ValueError as exc:
            raise ValueError(f"{manifest}: line {lineno}: {exc}") from None
        if rel.endswith(".npz"):
            q = NeuralQ(nn.load_model(root / rel), featurize)
            policy = q.greedy(n_states)
        else:
            q = TabularQ(np.load(root / rel))
            policy = q.greedy()
        cands.append(Candidate(pid, policy, record, int(ckpt), q))
    return CandidateSet(cands, int(meta.get("seed", 0)), meta.get("dataset", ""))
