"""Tabular sepsis simulator.

State variables (levels) in index order, most significant first::

    hr   heart rate          0=L 1=N 2=H
    sbp  systolic BP         0=L 1=N 2=H
    o2   percent oxygen      0=L 1=N
    glu  glucose             0=LL 1=L 2=N 3=H 4=HH
    abx  antibiotics         0/1
    vaso vasopressors        0/1
    vent ventilation         0/1
    diab diabetic            0/1

giving 1440 indices; 1440 is the discharge absorbing state and 1441 death.
Actions are ``abx * 4 + vaso * 2 + vent``, so the treatment bits of a state
equal the index of the action that produced it.

A state is *terminating* when three or more vitals are abnormal (death) or
when all vitals are normal and every treatment is off (discharge). Any action
taken in a terminating state moves to the matching absorbing state with
reward -1 or +1; every other transition has reward 0.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import NamedTuple, Union

import numpy as np

from .mdp import TabularMDP

RADICES = (3, 3, 2, 5, 2, 2, 2, 2)
NAMES = ("hr", "sbp", "o2", "glu", "abx", "vaso", "vent", "diab")
NORMAL = {"hr": 1, "sbp": 1, "o2": 1, "glu": 2}
N_LIVE = int(np.prod(RADICES))  # 1440
N_STATES = N_LIVE + 2
N_ACTIONS = 8
N_FEATURES = sum(RADICES)  # 21
P_DIABETIC = 0.2
MAX_EPISODE_LEN = 20

FLUCTUATE_P = 0.1
FLUCTUATE_P_GLU_DIABETIC = 0.3


class Absorbing(enum.IntEnum):
    DISCHARGE = N_LIVE
    DEATH = N_LIVE + 1


class SepsisState(NamedTuple):
    hr: int
    sbp: int
    o2: int
    glu: int
    abx: int
    vaso: int
    vent: int
    diab: int

    @property
    def index(self) -> int:
        return state_index(self)

    def n_abnormal(self) -> int:
        return (
            (self.hr != NORMAL["hr"])
            + (self.sbp != NORMAL["sbp"])
            + (self.o2 != NORMAL["o2"])
            + (self.glu != NORMAL["glu"])
        )

    def is_death(self) -> bool:
        return self.n_abnormal() >= 3

    def is_discharge(self) -> bool:
        return self.n_abnormal() == 0 and not (self.abx or self.vaso or self.vent)

    def is_terminating(self) -> bool:
        return self.is_death() or self.is_discharge()


AnyState = Union[SepsisState, Absorbing]


def state_index(state: AnyState) -> int:
    if isinstance(state, Absorbing):
        return int(state)
    idx = 0
    for value, radix in zip(state, RADICES):
        if not 0 <= value < radix:
            raise ValueError(f"level {value} out of range for radix {radix}")
        idx = idx * radix + int(value)
    return idx


def decode_state(index: int) -> AnyState:
    index = int(index)
    if index >= N_LIVE:
        return Absorbing(index)
    if index < 0:
        raise ValueError(f"negative state index {index}")
    values = []
    for radix in reversed(RADICES):
        index, rem = divmod(index, radix)
        values.append(rem)
    return SepsisState(*reversed(values))


def decode_action(action: int) -> tuple[int, int, int]:
    """Return ``(abx, vaso, vent)`` flags."""
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action {action} out of range")
    return (action >> 2) & 1, (action >> 1) & 1, action & 1


def encode_action(abx: int, vaso: int, vent: int) -> int:
    return (abx << 2) | (vaso << 1) | vent


# ----------------------------------------------------------------------------
# sampler


def _fluctuate(level: int, top: int, p: float, rng: np.random.Generator) -> int:
    u = rng.random()
    if u < p:
        return level - 1 if level > 0 else level
    if u >= 1.0 - p:
        return level + 1 if level < top else level
    return level


def step(state: AnyState, action: int, rng: np.random.Generator) -> tuple[AnyState, float, bool]:
    """Sample one transition. Returns ``(next_state, reward, done)``."""
    if isinstance(state, Absorbing):
        return state, 0.0, True
    if state.is_death():
        return Absorbing.DEATH, -1.0, True
    if state.is_discharge():
        return Absorbing.DISCHARGE, 1.0, True

    abx, vaso, vent = decode_action(action)
    hr, sbp, o2, glu, diab = state.hr, state.sbp, state.o2, state.glu, state.diab
    fl_hr = fl_sbp = fl_o2 = fl_glu = True

    if abx:
        if hr == 2 and rng.random() < 0.5:
            hr = 1
        if sbp == 2 and rng.random() < 0.5:
            sbp = 1
        fl_hr = fl_sbp = False
    elif state.abx:
        if hr == 1 and rng.random() < 0.1:
            hr = 2
        if sbp == 1 and rng.random() < 0.5:
            sbp = 2
        fl_hr = fl_sbp = False

    if vent:
        if o2 == 0 and rng.random() < 0.7:
            o2 = 1
        fl_o2 = False
    elif state.vent:
        if o2 == 1 and rng.random() < 0.1:
            o2 = 0
        fl_o2 = False

    if vaso:
        if not diab:
            if sbp == 0 and rng.random() < 0.7:
                sbp = 1
            elif sbp == 1 and rng.random() < 0.7:
                sbp = 2
        else:
            if sbp == 0:
                u = rng.random()
                if u < 0.5:
                    sbp = 1
                elif u < 0.9:
                    sbp = 2
            elif sbp == 1 and rng.random() < 0.9:
                sbp = 2
            if glu < 4 and rng.random() < 0.5:
                glu += 1
        fl_sbp = fl_glu = False
    elif state.vaso:
        p = 0.05 if diab else 0.1
        if sbp == 1 and rng.random() < p:
            sbp = 0
        elif sbp == 2 and rng.random() < p:
            sbp = 1
        fl_sbp = False

    if fl_hr:
        hr = _fluctuate(hr, 2, FLUCTUATE_P, rng)
    if fl_sbp:
        sbp = _fluctuate(sbp, 2, FLUCTUATE_P, rng)
    if fl_o2:
        o2 = _fluctuate(o2, 1, FLUCTUATE_P, rng)
    if fl_glu:
        glu = _fluctuate(glu, 4, FLUCTUATE_P_GLU_DIABETIC if diab else FLUCTUATE_P, rng)

    return SepsisState(hr, sbp, o2, glu, abx, vaso, vent, diab), 0.0, False


def step_index(state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
    nxt, reward, done = step(decode_state(state), action, rng)
    return state_index(nxt), reward, done


@lru_cache(maxsize=1)
def _live_table() -> tuple[SepsisState, ...]:
    return tuple(decode_state(i) for i in range(N_LIVE))


@lru_cache(maxsize=1)
def initial_support() -> tuple[np.ndarray, np.ndarray]:
    """Non-terminating state indices split by diabetes flag: ``(non_diabetic, diabetic)``."""
    table = _live_table()
    live = [s for s in table if not s.is_terminating()]
    return (
        np.array([s.index for s in live if s.diab == 0], dtype=np.int64),
        np.array([s.index for s in live if s.diab == 1], dtype=np.int64),
    )


def initial_state(rng: np.random.Generator) -> SepsisState:
    diab = int(rng.random() < P_DIABETIC)
    pool = initial_support()[diab]
    return decode_state(int(pool[rng.integers(pool.size)]))


def initial_distribution() -> np.ndarray:
    non_diab, diab = initial_support()
    mu = np.zeros(N_STATES)
    mu[non_diab] = (1.0 - P_DIABETIC) / non_diab.size
    mu[diab] = P_DIABETIC / diab.size
    return mu


# ----------------------------------------------------------------------------
# exact tensor by enumerating branch outcomes per vital
#
# Each vital's next level depends only on its own level, the treatments and
# the diabetes flag, and each branch draws independent randomness, so the joint
# next-vitals distribution is the outer product of per-vital distributions.


def _kernel(n: int, moves: dict[int, list[tuple[float, int]]]) -> np.ndarray:
    k = np.eye(n)
    for src, outcomes in moves.items():
        k[src] = 0.0
        stay = 1.0
        for p, dst in outcomes:
            k[src, dst] += p
            stay -= p
        k[src, src] += stay
    return k


def _fluctuation_kernel(n: int, p: float) -> np.ndarray:
    moves = {}
    for lv in range(n):
        out = []
        if lv > 0:
            out.append((p, lv - 1))
        if lv < n - 1:
            out.append((p, lv + 1))
        moves[lv] = out
    return _kernel(n, moves)


_I3, _I2, _I5 = np.eye(3), np.eye(2), np.eye(5)
_ABX_ON_HR = _kernel(3, {2: [(0.5, 1)]})
_ABX_ON_SBP = _kernel(3, {2: [(0.5, 1)]})
_ABX_OFF_HR = _kernel(3, {1: [(0.1, 2)]})
_ABX_OFF_SBP = _kernel(3, {1: [(0.5, 2)]})
_VENT_ON_O2 = _kernel(2, {0: [(0.7, 1)]})
_VENT_OFF_O2 = _kernel(2, {1: [(0.1, 0)]})
_VASO_ON_SBP = (
    _kernel(3, {0: [(0.7, 1)], 1: [(0.7, 2)]}),
    _kernel(3, {0: [(0.5, 1), (0.4, 2)], 1: [(0.9, 2)]}),
)
_VASO_ON_GLU = (_I5, _kernel(5, {0: [(0.5, 1)], 1: [(0.5, 2)], 2: [(0.5, 3)], 3: [(0.5, 4)]}))
_VASO_OFF_SBP = (
    _kernel(3, {1: [(0.1, 0)], 2: [(0.1, 1)]}),
    _kernel(3, {1: [(0.05, 0)], 2: [(0.05, 1)]}),
)
_FLUCT = {
    3: _fluctuation_kernel(3, FLUCTUATE_P),
    2: _fluctuation_kernel(2, FLUCTUATE_P),
    5: (_fluctuation_kernel(5, FLUCTUATE_P), _fluctuation_kernel(5, FLUCTUATE_P_GLU_DIABETIC)),
}


def vital_kernels(prev: tuple[int, int, int], action: int, diab: int) -> tuple[np.ndarray, ...]:
    """Per-vital transition matrices ``(hr, sbp, o2, glu)`` for one step.

    ``prev`` is the ``(abx, vaso, vent)`` treatment state before the action.
    """
    p_abx, p_vaso, p_vent = prev
    abx, vaso, vent = decode_action(action)
    hr_k, sbp_k, o2_k, glu_k = _I3, _I3, _I2, _I5
    fl = {"hr": True, "sbp": True, "o2": True, "glu": True}
    if abx:
        hr_k, sbp_k = hr_k @ _ABX_ON_HR, sbp_k @ _ABX_ON_SBP
        fl["hr"] = fl["sbp"] = False
    elif p_abx:
        hr_k, sbp_k = hr_k @ _ABX_OFF_HR, sbp_k @ _ABX_OFF_SBP
        fl["hr"] = fl["sbp"] = False
    if vent:
        o2_k = o2_k @ _VENT_ON_O2
        fl["o2"] = False
    elif p_vent:
        o2_k = o2_k @ _VENT_OFF_O2
        fl["o2"] = False
    if vaso:
        sbp_k = sbp_k @ _VASO_ON_SBP[diab]
        glu_k = glu_k @ _VASO_ON_GLU[diab]
        fl["sbp"] = fl["glu"] = False
    elif p_vaso:
        sbp_k = sbp_k @ _VASO_OFF_SBP[diab]
        fl["sbp"] = False
    if fl["hr"]:
        hr_k = hr_k @ _FLUCT[3]
    if fl["sbp"]:
        sbp_k = sbp_k @ _FLUCT[3]
    if fl["o2"]:
        o2_k = o2_k @ _FLUCT[2]
    if fl["glu"]:
        glu_k = glu_k @ _FLUCT[5][diab]
    return hr_k, sbp_k, o2_k, glu_k


@lru_cache(maxsize=1)
def _exact_tables() -> tuple[np.ndarray, np.ndarray]:
    P = np.zeros((N_STATES, N_ACTIONS, N_STATES))
    R = np.zeros((N_STATES, N_ACTIONS))
    n_vitals = 3 * 3 * 2 * 5
    for s in _live_table():
        i = s.index
        if s.is_death():
            P[i, :, Absorbing.DEATH] = 1.0
            R[i, :] = -1.0
            continue
        if s.is_discharge():
            P[i, :, Absorbing.DISCHARGE] = 1.0
            R[i, :] = 1.0
            continue
        for a in range(N_ACTIONS):
            hr_k, sbp_k, o2_k, glu_k = vital_kernels((s.abx, s.vaso, s.vent), a, s.diab)
            joint = np.einsum("i,j,k,l->ijkl", hr_k[s.hr], sbp_k[s.sbp], o2_k[s.o2], glu_k[s.glu])
            # vitals combo v maps to index v * 16 + a * 2 + diab
            nxt = np.arange(n_vitals) * 16 + a * 2 + s.diab
            P[i, a, nxt] = joint.reshape(-1)
    for z in Absorbing:
        P[z, :, z] = 1.0
    P.flags.writeable = False
    R.flags.writeable = False
    return P, R


def exact_mdp(discount: float = 0.99) -> TabularMDP:
    """Exact tabular model of the simulator (1442 states, 8 actions)."""
    P, R = _exact_tables()
    absorbing = np.zeros(N_STATES, dtype=bool)
    absorbing[list(Absorbing)] = True
    return TabularMDP(P, R, initial_distribution(), float(discount), absorbing)


# ----------------------------------------------------------------------------
# features

_OFFSETS = np.concatenate([[0], np.cumsum(RADICES)[:-1]])


def encode_features(state: AnyState) -> np.ndarray:
    """Block-wise one-hot vector of length 21; absorbing states map to zeros."""
    x = np.zeros(N_FEATURES)
    if isinstance(state, Absorbing):
        return x
    x[_OFFSETS + np.asarray(state)] = 1.0
    return x


def decode_features(x: np.ndarray) -> AnyState | None:
    """Inverse of ``encode_features`` for exact one-hot inputs; ``None`` for all-zero."""
    x = np.asarray(x)
    if not x.any():
        return None
    values = [int(np.argmax(x[o : o + r])) for o, r in zip(_OFFSETS, RADICES)]
    return SepsisState(*values)


@lru_cache(maxsize=1)
def feature_matrix() -> np.ndarray:
    """Features for every state index, shape ``(1442, 21)``."""
    X = np.stack([encode_features(decode_state(i)) for i in range(N_STATES)])
    X.flags.writeable = False
    return X


class SepsisSimulator:
    """Environment handle used by dataset generation and the pipeline."""

    label = "sepsis"
    n_states = N_STATES
    n_actions = N_ACTIONS
    max_len = MAX_EPISODE_LEN

    def reset(self, rng: np.random.Generator) -> int:
        return initial_state(rng).index

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        return step_index(state, action, rng)

    def exact_mdp(self, discount: float = 0.99) -> TabularMDP:
        return exact_mdp(discount)

    def features(self, states: np.ndarray) -> np.ndarray:
        return feature_matrix()[np.asarray(states)]
