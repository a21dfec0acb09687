"""
Exhaustive enumeration of the speculative protocol with gating and branching off. Every draft,
acceptance and correction branch is followed with its exact probability; the committed law is
compared with the target model's autoregressive law.
"""
from collections import defaultdict
from typing import Callable, Dict, List, Sequence, Tuple, Union

import math
import numpy as np

from covspec.errors import TooLarge
from covspec.probcore import acceptance_prob, residual_dist

MAX_VOCAB = 6
MAX_K = 3
MAX_HORIZON = 3

Prefix = Tuple[int, ...]
Table = Union[Sequence[Sequence[float]], Callable[[Prefix], Sequence[float]]]


def _as_function(table: Table) -> Callable[[Prefix], np.ndarray]:
    if callable(table):
        return lambda prefix: np.asarray(table(prefix), dtype=np.float64)
    rows = [np.asarray(row, dtype=np.float64) for row in table]
    return lambda prefix: rows[min(len(prefix), len(rows) - 1)]


def _round(prefix: Prefix, p_d, p_t, k: int, horizon: int, weight: float,
           out: Dict[Prefix, List[float]]):
    """
    one verification round from `prefix`, every outcome appended to out[next prefix]
    """
    n = min(k, horizon - len(prefix))

    def draft(tokens: Prefix, w: float):
        if len(tokens) < n:
            dist = p_d(prefix + tokens)
            for y in np.flatnonzero(dist > 0):
                draft(tokens + (int(y),), w * dist[y])
            return
        verify(tokens, 0, w)

    def verify(tokens: Prefix, j: int, w: float):
        if j == len(tokens):
            bonus = p_t(prefix + tokens)
            for b in np.flatnonzero(bonus > 0):
                out[prefix + tokens + (int(b),)].append(w * bonus[b])
            return
        here = prefix + tokens[:j]
        y = tokens[j]
        alpha = acceptance_prob(p_t(here)[y], p_d(here)[y])
        if alpha > 0:
            verify(tokens, j + 1, w * alpha)
        if alpha < 1:
            residual = residual_dist(p_t(here), p_d(here))
            for c in np.flatnonzero(residual > 0):
                out[here + (int(c),)].append(w * (1 - alpha) * residual[c])

    draft((), weight)


def committed_law(p_d_table: Table, p_t_table: Table, k: int, horizon: int) -> Dict[Prefix, float]:
    """
    law of the first `horizon` committed tokens
    """
    p_d, p_t = _as_function(p_d_table), _as_function(p_t_table)
    frontier: Dict[Prefix, float] = {(): 1.0}
    done: Dict[Prefix, List[float]] = defaultdict(list)
    while frontier:
        out: Dict[Prefix, List[float]] = defaultdict(list)
        for prefix, weight in frontier.items():
            _round(prefix, p_d, p_t, k, horizon, weight, out)
        frontier = {}
        for prefix, weights in out.items():
            if len(prefix) >= horizon:
                done[prefix[:horizon]].extend(weights)
            else:
                frontier[prefix] = math.fsum(weights)
    return {prefix: math.fsum(weights) for prefix, weights in done.items()}


def target_law(p_t_table: Table, horizon: int) -> Dict[Prefix, float]:
    p_t = _as_function(p_t_table)
    law = {(): 1.0}
    for _ in range(horizon):
        law = {prefix + (int(w),): p * dist[w]
               for prefix, p in law.items()
               for dist in [p_t(prefix)]
               for w in np.flatnonzero(dist > 0)}
    return law


def total_variation(a: Dict[Prefix, float], b: Dict[Prefix, float]) -> float:
    return 0.5 * math.fsum(abs(a.get(key, 0.0) - b.get(key, 0.0)) for key in set(a) | set(b))


def _marginal(law: Dict[Prefix, float], length: int) -> Dict[Prefix, List[float]]:
    prefixes: Dict[Prefix, List[float]] = defaultdict(list)
    for seq, p in law.items():
        prefixes[seq[:length]].append(p)
    return {key: math.fsum(ps) for key, ps in prefixes.items()}


def exactness_oracle(p_d_table: Table, p_t_table: Table, k: int, horizon: int) -> float:
    """
    largest total-variation distance between the committed law and the target law of the
    first i tokens, over i = 1..horizon

    @param p_d_table: draft distributions, one row per position or a function of the prefix
    @param p_t_table: target distributions, same form
    """
    vocab = len(_as_function(p_t_table)(()))
    if vocab > MAX_VOCAB or k > MAX_K or horizon > MAX_HORIZON:
        raise TooLarge(f"enumeration is capped at |W| <= {MAX_VOCAB}, k <= {MAX_K}, horizon <= {MAX_HORIZON}; "
                       f"got |W| = {vocab}, k = {k}, horizon = {horizon}")
    if k < 1 or horizon < 1:
        raise ValueError(f"k and horizon must be positive, got k={k}, horizon={horizon}")
    committed = committed_law(p_d_table, p_t_table, k, horizon)
    target = target_law(p_t_table, horizon)
    return max(total_variation(_marginal(committed, i), _marginal(target, i)) for i in range(1, horizon + 1))
