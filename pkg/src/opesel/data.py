"""Logged episodes: containers, behavior policies, generation and file I/O.

File format (``v1``)::

    # opesel-dataset v1; env=sepsis; behavior=uniform; seed=1; m=2
    # <optional further comment lines>
    0,1,1203,5,0.0,1187,0
    ...

One transition per line as ``episode_id,t,state,action,reward,next_state,done``, ``t`` starting at 1 within each episode, ``done``
written as 0/1 and rewards with ``repr(float)`` so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .seeding import derive_seed, make_rng

FORMAT_TAG = "opesel-dataset v1"
_SPLIT_KEY = 0x5B117
_HEADER_RE = re.compile(
    r"^# opesel-dataset v1; env=(?P<env>[^;]*); behavior=(?P<behavior>[^;]*); "
    r"seed=(?P<seed>-?\d+); m=(?P<m>\d+)\s*$"
)


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Transition(NamedTuple):
    episode_id: int
    t: int
    state: int
    action: int
    reward: float
    next_state: int
    done: bool


@dataclass(frozen=True)
class Dataset:
    episode_ids: np.ndarray
    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    seed: int = 0
    behavior: str = "unknown"
    env: str = "unknown"
    comments: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        self._check()

    def _check(self) -> None:
        n = self.t.size
        for name in ("episode_ids", "states", "actions", "rewards", "next_states", "dones"):
            if getattr(self, name).shape != (n,):
                raise DatasetFormatError(f"column {name} has wrong length")
        if n == 0:
            return
        starts = self.t == 1
        if not starts[0]:
            raise DatasetFormatError("first transition must have t=1")
        same_ep = self.episode_ids[1:] == self.episode_ids[:-1]
        if np.any(same_ep & (self.t[1:] != self.t[:-1] + 1)) or np.any(~same_ep & (self.t[1:] != 1)):
            bad = int(np.flatnonzero((same_ep & (self.t[1:] != self.t[:-1] + 1)) | (~same_ep & (self.t[1:] != 1)))[0])
            raise DatasetFormatError(f"non-contiguous t at transition {bad + 1}")
        if np.unique(self.episode_ids[starts]).size != int(starts.sum()):
            raise DatasetFormatError("episode ids are not grouped")
        last = np.append(~same_ep, True)
        if np.any(self.dones & ~last):
            raise DatasetFormatError("done set before the last transition of an episode")

    # -- views ---------------------------------------------------------------

    @property
    def n_transitions(self) -> int:
        return int(self.t.size)

    @property
    def n_episodes(self) -> int:
        return int(np.count_nonzero(self.t == 1))

    @property
    def episode_starts(self) -> np.ndarray:
        return np.flatnonzero(self.t == 1)

    @property
    def episode_lengths(self) -> np.ndarray:
        return np.diff(np.append(self.episode_starts, self.n_transitions))

    @property
    def initial_states(self) -> np.ndarray:
        return self.states[self.t == 1]

    def discounted_returns(self, discount: float) -> np.ndarray:
        disc = self.rewards * discount ** (self.t - 1.0)
        return np.add.reduceat(disc, self.episode_starts) if self.n_transitions else np.zeros(0)

    def __iter__(self) -> Iterator[Transition]:
        for row in zip(self.episode_ids, self.t, self.states, self.actions, self.rewards, self.next_states, self.dones):
            yield Transition(int(row[0]), int(row[1]), int(row[2]), int(row[3]), float(row[4]), int(row[5]), bool(row[6]))

    def episodes(self) -> Iterator["Dataset"]:
        bounds = np.append(self.episode_starts, self.n_transitions)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            yield self.select(np.arange(lo, hi))

    def select(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            self.episode_ids[rows], self.t[rows], self.states[rows], self.actions[rows],
            self.rewards[rows], self.next_states[rows], self.dones[rows],
            self.seed, self.behavior, self.env,
        )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Sequence], **provenance) -> "Dataset":
        cols = list(zip(*transitions)) if transitions else [()] * 7
        return cls(
            np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.int64),
            np.asarray(cols[2], dtype=np.int64), np.asarray(cols[3], dtype=np.int64),
            np.asarray(cols[4], dtype=np.float64), np.asarray(cols[5], dtype=np.int64),
            np.asarray(cols[6], dtype=bool), **provenance,
        )

    @classmethod
    def concatenate(cls, parts: Sequence["Dataset"], renumber: bool = True, **provenance) -> "Dataset":
        ids = []
        offset = 0
        for p in parts:
            if renumber:
                ids.append(np.cumsum(p.t == 1) - 1 + offset)
                offset += p.n_episodes
            else:
                ids.append(p.episode_ids)
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(
            np.concatenate(ids), cat("t"), cat("states"), cat("actions"),
            cat("rewards"), cat("next_states"), cat("dones"), **provenance,
        )


# -- behavior -------------------------------------------------------------------


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str = "uniform_random"
    epsilon: float = 0.1
    components: tuple[tuple["BehaviorSpec", int], ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform_random", "epsilon_greedy", "mixture"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.kind == "mixture" and not self.components:
            raise ValueError("mixture needs components")

    @property
    def label(self) -> str:
        if self.kind == "uniform_random":
            return "uniform"
        if self.kind == "epsilon_greedy":
            return f"egreedy{self.epsilon:g}"
        return "mixture(" + "+".join(f"{c.label}:{n}" for c, n in self.components) + ")"

    @classmethod
    def parse(cls, text: str) -> "BehaviorSpec":
        """Parse ``uniform``, ``egreedy[<eps>]`` or ``mixture(a:n+b:n)``."""
        text = text.strip()
        if text in ("uniform", "uniform_random", "random"):
            return cls("uniform_random")
        m = re.fullmatch(r"(?:egreedy|epsilon_greedy)([0-9.eE-]*)", text)
        if m:
            return cls("epsilon_greedy", float(m.group(1)) if m.group(1) else 0.1)
        m = re.fullmatch(r"mixture\((.*)\)", text)
        if m:
            comps = []
            for part in m.group(1).split("+"):
                name, _, count = part.rpartition(":")
                comps.append((cls.parse(name), int(count)))
            return cls("mixture", components=tuple(comps))
        raise ValueError(f"cannot parse behavior {text!r}")


def _greedy_actions(env, discount: float) -> np.ndarray:
    from .mdp import value_iteration

    _, policy = value_iteration(env.exact_mdp(discount), tolerance=1e-8)
    return policy.greedy_actions


def _rollout(env, episode_id: int, rng, choose, max_len: int) -> list[tuple]:
    rows = []
    s = env.reset(rng)
    for t in range(1, max_len + 1):
        a = choose(s, rng)
        s2, r, done = env.step(s, a, rng)
        rows.append((episode_id, t, s, a, r, s2, done))
        if done:
            break
        s = s2
    return rows


def generate(
    env,
    behavior: BehaviorSpec,
    m: int,
    max_len: int | None = None,
    seed: int = 0,
    discount: float = 0.99,
) -> Dataset:
    """Roll out ``m`` episodes; episode ``j`` draws from ``make_rng(seed, j)``.

    Mixtures generate their components as consecutive blocks; block ``k`` uses
    master seed ``derive_seed(seed, k)`` so it equals a stand-alone generation
    with that seed.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    max_len = env.max_len if max_len is None else max_len
    if behavior.kind == "mixture":
        if sum(n for _, n in behavior.components) != m:
            raise ValueError("mixture component counts must sum to m")
        blocks = [
            generate(env, comp, n, max_len, derive_seed(seed, k) & 0x7FFFFFFFFFFFFFFF, discount)
            for k, (comp, n) in enumerate(behavior.components)
        ]
        return Dataset.concatenate(blocks, seed=seed, behavior=behavior.label, env=env.label)

    n_actions = env.n_actions
    if behavior.kind == "uniform_random":
        def choose(s, rng):
            return int(rng.integers(n_actions))
    else:
        greedy = _greedy_actions(env, discount)
        eps = behavior.epsilon

        def choose(s, rng):
            if rng.random() < eps:
                return int(rng.integers(n_actions))
            return int(greedy[s])

    rows: list[tuple] = []
    for j in range(m):
        rows.extend(_rollout(env, j, make_rng(seed, j), choose, max_len))
    return Dataset.from_transitions(rows, seed=seed, behavior=behavior.label, env=env.label)


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Episode-level split; the first part receives ``round(fraction * m)`` episodes."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    m = dataset.n_episodes
    order = make_rng(seed, _SPLIT_KEY).permutation(m)
    k = int(round(fraction * m))
    first = np.zeros(m, dtype=bool)
    first[order[:k]] = True
    ep_index = np.cumsum(dataset.t == 1) - 1
    mask = first[ep_index]
    return dataset.select(np.flatnonzero(mask)), dataset.select(np.flatnonzero(~mask))


# -- I/O ----------------------------------------------------------------------


def format_dataset(dataset: Dataset) -> str:
    lines = [
        f"# {FORMAT_TAG}; env={dataset.env}; behavior={dataset.behavior}; "
        f"seed={dataset.seed}; m={dataset.n_episodes}"
    ]
    lines.extend(f"# {c}" for c in dataset.comments)
    for tr in dataset:
        lines.append(
            f"{tr.episode_id},{tr.t},{tr.state},{tr.action},{tr.reward!r},{tr.next_state},{int(tr.done)}"
        )
    return "\n".join(lines) + "\n"


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save(dataset: Dataset, path: str | os.PathLike) -> None:
    atomic_write(path, format_dataset(dataset))


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("empty file", 1)
    head = _HEADER_RE.match(lines[0])
    if not head:
        raise DatasetFormatError(f"expected '# {FORMAT_TAG}; ...' header", 1)
    comments = []
    cols: list[list] = [[] for _ in range(7)]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DatasetFormatError(f"expected 7 fields, got {len(parts)}", lineno)
        try:
            ep, t, s, a = (int(p) for p in parts[:4])
            r = float(parts[4])
            s2 = int(parts[5])
            done = {"0": False, "1": True}[parts[6].strip()]
        except (ValueError, KeyError):
            raise DatasetFormatError(f"malformed field in {line!r}", lineno) from None
        if cols[0] and ep == cols[0][-1] and t != cols[1][-1] + 1:
            raise DatasetFormatError(f"non-contiguous t ({cols[1][-1]} -> {t}) in episode {ep}", lineno)
        if (not cols[0] or ep != cols[0][-1]) and t != 1:
            raise DatasetFormatError(f"episode {ep} does not start at t=1", lineno)
        for c, v in zip(cols, (ep, t, s, a, r, s2, done)):
            c.append(v)
    ds = Dataset(
        np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.int64),
        np.asarray(cols[2], dtype=np.int64), np.asarray(cols[3], dtype=np.int64),
        np.asarray(cols[4], dtype=np.float64), np.asarray(cols[5], dtype=np.int64),
        np.asarray(cols[6], dtype=bool),
        seed=int(head["seed"]), behavior=head["behavior"], env=head["env"], comments=tuple(comments),
    )
    if ds.n_episodes != int(head["m"]):
        raise DatasetFormatError(f"header declares m={head['m']} but file has {ds.n_episodes} episodes", 1)
    return ds


def load(path: str | os.PathLike) -> Dataset:
    return parse_dataset(Path(path).read_text())
