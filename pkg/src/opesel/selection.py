"""Ranking metrics, regret, score combiners and two-stage selection.

Ordering conventions: a higher score is better; NaN scores (undefined
estimates) sort below every defined score; equal scores keep candidate order,
so the earlier candidate wins a tie.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


class UndefinedCorrelation(ValueError):
    pass


def _sortable(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).copy()
    s[np.isnan(s)] = -np.inf
    return s


def order_by_score(scores: Sequence[float]) -> np.ndarray:
    """Candidate indices from best to worst score (stable)."""
    return np.argsort(-_sortable(scores), kind="stable")


def top_n(scores: Sequence[float], n: int) -> np.ndarray:
    return order_by_score(scores)[:n]


def spearman_rho(scores: Sequence[float], truths: Sequence[float]) -> float:
    """Spearman correlation using average ranks for ties."""
    s, t = _sortable(scores), np.asarray(truths, dtype=np.float64)
    if s.size != t.size or s.size < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    rs, rt = rankdata(s), rankdata(t)
    rs, rt = rs - rs.mean(), rt - rt.mean()
    denom = math.sqrt(float(rs @ rs) * float(rt @ rt))
    if denom == 0:
        raise UndefinedCorrelation("rank variance is zero")
    return float(rs @ rt / denom)


def regret_at_n(scores: Sequence[float], truths: Sequence[float], n: int) -> float:
    """Best truth overall minus best truth among the ``n`` top-scored candidates."""
    t = np.asarray(truths, dtype=np.float64)
    if not 1 <= n <= t.size:
        raise ValueError(f"n must lie in [1, {t.size}]")
    return float(t.max() - t[top_n(scores, n)].max())


@dataclass(frozen=True)
class TwoStageResult:
    chosen: int
    subset: tuple[int, ...]
    stage2_scores: tuple[float, ...]


def two_stage_select(
    stage1_scores: Sequence[float], stage2_evaluator: Callable[[int], float], alpha: int
) -> TwoStageResult:
    """Keep the ``alpha`` best candidates by stage-1 score and pick the best of
    those by stage-2 score. ``stage2_evaluator`` is called once per kept candidate.
    """
    K = len(stage1_scores)
    if not 1 <= alpha <= K:
        raise ValueError(f"alpha must lie in [1, {K}]")
    subset = top_n(stage1_scores, alpha)
    s2 = [float(stage2_evaluator(int(i))) for i in subset]
    # ties among stage-2 scores go to the lower candidate index
    by_index = np.argsort(subset, kind="stable")
    ranked = sorted(by_index, key=lambda j: -_sortable([s2[j]])[0])
    best = ranked[0]
    return TwoStageResult(int(subset[best]), tuple(int(i) for i in subset), tuple(s2))


def average_score(score_vectors: Sequence[Sequence[float]]) -> np.ndarray:
    vecs = np.asarray(score_vectors, dtype=np.float64)
    if vecs.shape[0] < 2:
        raise ValueError("need at least two score vectors")
    return vecs.mean(axis=0)


def average_rank(score_vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Mean per-method rank (1 = worst), average ranks for ties; higher is better."""
    if len(score_vectors) < 2:
        raise ValueError("need at least two score vectors")
    return np.mean([rankdata(_sortable(v)) for v in score_vectors], axis=0)


EXACT_MAX_C = 5000


def random_prune_probability(C: int, A: int, B: int) -> float:
    """Probability that a uniformly random ordering of ``C`` values puts at least
    one of the ``B`` largest among its first ``A`` positions.
    """
    if not (1 <= A <= C and 1 <= B <= C):
        raise ValueError("require 1 <= A, B <= C")
    if A + B > C:
        return 1.0
    if C <= EXACT_MAX_C:
        # exact rational, so e.g. B = 1 gives exactly A / C
        return float(1 - Fraction(math.comb(C - A, B), math.comb(C, B)))
    log_miss = math.lgamma(C - A + 1) + math.lgamma(C - B + 1) - math.lgamma(C + 1) - math.lgamma(C - A - B + 1)
    return 1.0 - math.exp(log_miss)


BRUTE_FORCE_MAX_C = 9


def brute_force_prune_probability(C: int, A: int, B: int) -> Fraction:
    """Exact fraction of the ``C!`` orderings satisfying the pruning event."""
    if C > BRUTE_FORCE_MAX_C:
        raise ValueError(f"C={C} exceeds the enumeration cap {BRUTE_FORCE_MAX_C}")
    if not (1 <= A <= C and 1 <= B <= C):
        raise ValueError("require 1 <= A, B <= C")
    hits = total = 0
    # value rank 0 is the largest; the top-B values are ranks < B
    for perm in itertools.permutations(range(C)):
        total += 1
        hits += min(perm[:A]) < B
    return Fraction(hits, total)


def empirical_cdf(
    score_runs: Sequence[Sequence[float]],
    truth_runs: Sequence[Sequence[float]],
    alphas: Sequence[int],
    betas: Sequence[int],
) -> np.ndarray:
    """Fraction of runs whose top-``alpha`` (by score) holds a top-``beta`` policy (by truth).

    Returns an array indexed ``[alpha_idx, beta_idx]``.
    """
    table = np.zeros((len(alphas), len(betas)))
    for scores, truths in zip(score_runs, truth_runs):
        t = np.asarray(truths, dtype=np.float64)
        sorted_t = np.sort(t)[::-1]
        order = order_by_score(scores)
        for i, a in enumerate(alphas):
            best_kept = t[order[:a]].max()
            for j, b in enumerate(betas):
                table[i, j] += best_kept >= sorted_t[b - 1]
    return table / len(score_runs)
