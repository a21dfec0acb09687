from typing import Tuple

import numpy as np
import pytest

from covspec.engine.branching import fanout, top_candidates, plan_branches, resolve_branches
from covspec.engine.segment import DraftSegment
from covspec.errors import ProtocolFault


class CountingDrafter:
    """
    prefers token len(prefix) % V, then the ids after it; one forward pass per new prefix
    """
    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.branch_passes = 0
        self.seen = set()

    def branch_logits(self, prefix: Tuple[int, ...]) -> np.ndarray:
        if prefix not in self.seen:
            self.seen.add(prefix)
            self.branch_passes += 1
        return -((np.arange(self.vocab_size) - len(prefix)) % self.vocab_size).astype(np.float64)

    def branch_token(self, prefix: Tuple[int, ...]) -> int:
        return int(np.argmax(self.branch_logits(prefix)))


def segment_of(*tokens, start_pos=0):
    return DraftSegment(start_pos=start_pos, tokens=tuple(tokens), draft_token_probs=(0.5,) * len(tokens))


@pytest.mark.parametrize("F0,rho,n,expected", [
    (4, 0.5, 4, [4, 2, 1, 1, 1]),
    (3, 0.7, 4, [3, 3, 2, 2, 1]),
    (1, 0.5, 3, [1, 1, 1, 1]),
])
def test_fanout(F0, rho, n, expected):
    assert fanout(F0, rho, n) == expected


def test_top_candidates():
    logits = np.array([0.1, 2.0, 1.0, 2.0])
    assert top_candidates(logits, 2, exclude=None) == [1, 3]
    assert top_candidates(logits, 2, exclude=1) == [3, 2]
    assert top_candidates(logits, 10, exclude=0) == [1, 3, 2]


class TestPlan:
    def test_candidates_exclude_drafted_tokens(self):
        drafter = CountingDrafter(8)
        plan = plan_branches(segment_of(0, 1), (), drafter, F0=4, rho=0.5, budget=3, max_len=100,
                             preempted=lambda: False)
        assert plan.candidates == [[1, 2, 3, 4], [2, 3], [2]]
        assert len(plan.branches) == 7
        assert plan.forward_passes == 3
        assert all(b.continuation == [] for b in plan.branches)

    def test_budget(self):
        drafter = CountingDrafter(8)
        plan = plan_branches(segment_of(0, 1), (), drafter, F0=4, rho=0.5, budget=16, max_len=100,
                             preempted=lambda: False)
        assert plan.forward_passes == 16 == drafter.branch_passes
        assert sum(len(b.continuation) for b in plan.branches) == 13
        assert all(len(b.continuation) <= 2 for b in plan.branches)

    def test_continuations_follow_the_drafter(self):
        drafter = CountingDrafter(8)
        plan = plan_branches(segment_of(0, 1), (), drafter, F0=4, rho=0.5, budget=100, max_len=100,
                             preempted=lambda: False)
        branch = plan.find(0, 3)
        assert branch.continuation == [1, 2]  # prefixes (3,) and (3, 1)

    def test_preempted(self):
        drafter = CountingDrafter(8)
        plan = plan_branches(segment_of(0, 1), (), drafter, F0=4, rho=0.5, budget=16, max_len=100,
                             preempted=lambda: drafter.branch_passes >= 5)
        assert plan.forward_passes == 5

    def test_preempted_at_once(self):
        plan = plan_branches(segment_of(0, 1), (), CountingDrafter(8), F0=4, rho=0.5, budget=16, max_len=100,
                             preempted=lambda: True)
        assert plan.candidates == [] and plan.branches == []

    def test_length_limit(self):
        drafter = CountingDrafter(8)
        plan = plan_branches(segment_of(0, 1, start_pos=5), (7,) * 5, drafter, F0=2, rho=0.5, budget=100,
                             max_len=7, preempted=lambda: False)
        for branch in plan.branches:
            assert 5 + branch.outcome + 1 + len(branch.continuation) <= 7 + 1


class TestResolve:
    @pytest.fixture
    def planned(self):
        segment = segment_of(0, 1)
        plan = plan_branches(segment, (), CountingDrafter(8), F0=4, rho=0.5, budget=16, max_len=100,
                             preempted=lambda: False)
        return plan, segment

    def test_hit(self, planned):
        plan, segment = planned
        branch = resolve_branches(plan, segment, 0, 1)
        assert (branch.outcome, branch.token) == (0, 1)

    def test_miss(self, planned):
        plan, segment = planned
        assert resolve_branches(plan, segment, 0, 7) is None

    def test_no_plan(self):
        assert resolve_branches(None, segment_of(0), 0, 1) is None

    def test_foreign_segment(self, planned):
        plan, _ = planned
        with pytest.raises(ProtocolFault):
            resolve_branches(plan, segment_of(0, 1, start_pos=3), 0, 1)

    def test_outcome_out_of_range(self, planned):
        plan, segment = planned
        with pytest.raises(ProtocolFault):
            resolve_branches(plan, segment, 3, 1)
