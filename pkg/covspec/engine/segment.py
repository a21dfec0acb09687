"""
Values exchanged between the device and edge roles within one verification round.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from covspec.probcore import ProbDist, margin


@dataclass(frozen=True)
class DraftSegment:
    start_pos: int  # absolute position of the first drafted token
    tokens: Tuple[int, ...]
    draft_token_probs: Tuple[float, ...]  # p_d of each drafted token
    gated_prefix: Tuple[int, ...] = ()  # committed on the device since the last sync, precedes start_pos

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("a draft segment holds at least one token")
        if len(self.draft_token_probs) != len(self.tokens):
            raise ValueError("one draft probability per drafted token is required")
        if any(p <= 0 for p in self.draft_token_probs):
            raise ValueError("drafted tokens must have positive draft probability")

    def __len__(self):
        return len(self.tokens)

    @property
    def context_len(self) -> int:
        """
        length of the committed prefix the edge must hold before the gated prefix
        """
        return self.start_pos - len(self.gated_prefix)

    def positions(self) -> range:
        return range(self.start_pos, self.start_pos + len(self.tokens))


@dataclass(frozen=True)
class GateDecision:
    margin: float
    gamma: float

    @property
    def verify(self) -> bool:
        return self.margin < self.gamma

    @staticmethod
    def of(dist: ProbDist, gamma: float) -> "GateDecision":
        return GateDecision(margin=margin(dist), gamma=gamma)


@dataclass(frozen=True)
class BonusToken:
    token: int


@dataclass(frozen=True, eq=False)
class TargetLogits:
    logits: np.ndarray  # as received, after float16 transport


@dataclass(frozen=True)
class CorrectedToken:
    token: int  # correction sampled by the edge (decoupling disabled)


@dataclass(frozen=True)
class VerificationOutcome:
    accepted_len: int
    draft_len: int
    payload: Union[BonusToken, TargetLogits, CorrectedToken]

    def __post_init__(self):
        if not 0 <= self.accepted_len <= self.draft_len:
            raise ValueError(f"accepted length {self.accepted_len} outside [0, {self.draft_len}]")
        if isinstance(self.payload, BonusToken) != self.full_accept:
            raise ValueError("a bonus token is returned exactly when every drafted token is accepted")

    @property
    def full_accept(self) -> bool:
        return self.accepted_len == self.draft_len
