"""
Parallel branching: while a segment is being verified, the device drafts continuations for the
most likely verification outcomes so a matching outcome finds its next tokens already drafted.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import math
import numpy as np

from covspec.engine.segment import DraftSegment
from covspec.errors import ProtocolFault


class BranchDrafter(Protocol):
    branch_passes: int

    def branch_logits(self, prefix: Tuple[int, ...]) -> np.ndarray:
        ...

    def branch_token(self, prefix: Tuple[int, ...]) -> int:
        ...


def fanout(F0: int, rho: float, n: int) -> List[int]:
    """
    candidate counts F_j = ceil(F0 * rho^j) for j = 0..n
    """
    return [max(1, math.ceil(F0 * rho ** j)) for j in range(n + 1)]


@dataclass
class Branch:
    outcome: int  # accepted length this branch prepares for
    token: int  # bonus or correction token it guesses
    continuation: List[int] = field(default_factory=list)


@dataclass
class BranchPlan:
    start_pos: int
    tokens: Tuple[int, ...]
    candidates: List[List[int]]  # candidates[j] for outcome j = 0..len(tokens)
    branches: List[Branch] = field(default_factory=list)
    forward_passes: int = 0

    def find(self, outcome: int, token: int) -> Optional[Branch]:
        for branch in self.branches:
            if branch.outcome == outcome and branch.token == token:
                return branch
        return None


def top_candidates(logits: np.ndarray, count: int, exclude: Optional[int]) -> List[int]:
    order = np.argsort(-np.asarray(logits), kind='stable')
    return [int(t) for t in order if t != exclude][:count]


def plan_branches(segment: DraftSegment,
                  committed: Sequence[int],
                  drafter: BranchDrafter,
                  F0: int, rho: float, budget: int, max_len: int,
                  preempted: Callable[[], bool]) -> BranchPlan:
    """
    Prepares branches for every outcome of the segment's verification.

    @param segment: the segment under verification
    @param committed: the committed prefix the segment starts after
    @param drafter: gives draft logits and draft tokens at a prefix, from its cache or with one
        forward pass, and counts its forward passes
    @param budget: forward passes allowed; a cached lookup is free
    @param max_len: continuations are not drafted past this many tokens
    @param preempted: polled at every token boundary, true once the verification result is in
    @return: the candidates of every outcome and the continuation drafted so far for each
    """
    base = tuple(committed)
    n = len(segment.tokens)
    plan = BranchPlan(start_pos=segment.start_pos, tokens=segment.tokens, candidates=[])
    passes_before = drafter.branch_passes
    for j, f_j in enumerate(fanout(F0, rho, n)):
        if preempted():
            return plan
        exclude = segment.tokens[j] if j < n else None
        prefix = base + segment.tokens[:j]
        plan.candidates.append(top_candidates(drafter.branch_logits(prefix), f_j, exclude))
        plan.branches.extend(Branch(outcome=j, token=c) for c in plan.candidates[-1])
        plan.forward_passes = drafter.branch_passes - passes_before

    while plan.forward_passes < budget:
        progressed = False
        for branch in plan.branches:
            if plan.forward_passes >= budget or preempted():
                return plan
            prefix = base + segment.tokens[:branch.outcome] + (branch.token,) + tuple(branch.continuation)
            if len(prefix) >= max_len or len(branch.continuation) >= n:
                continue
            branch.continuation.append(drafter.branch_token(prefix))
            plan.forward_passes = drafter.branch_passes - passes_before
            progressed = True
        if not progressed:
            break
    return plan


def resolve_branches(plan: Optional[BranchPlan], segment: DraftSegment,
                     accepted_len: int, token: int) -> Optional[Branch]:
    """
    the branch prepared for (accepted_len, token), or None to fall back to plain drafting
    """
    if plan is None:
        return None
    if plan.start_pos != segment.start_pos or plan.tokens != segment.tokens:
        raise ProtocolFault(f"branch plan for position {plan.start_pos} does not belong to the "
                            f"segment at position {segment.start_pos}")
    if not 0 <= accepted_len <= len(segment.tokens):
        raise ProtocolFault(f"accepted length {accepted_len} for a segment of {len(segment.tokens)} tokens")
    if accepted_len >= len(plan.candidates):
        return None  # preempted before this outcome was planned
    return plan.find(accepted_len, token)
