"""
Parameters of the device and edge roles. These classes are:
- created from the `drafting` section of an experiment yaml file
- used by the device drafter, the edge verifier and the length controller
- hashed into the session config digest, so both roles of a socket session agree on them
"""
from dataclasses import dataclass
from typing import Optional

from dataclasses_json import dataclass_json


@dataclass_json
@dataclass
class DraftingConfig:
    # margin gating
    gating: bool = True
    gamma: float = 0.7  # tokens with margin >= gamma are committed without verification

    # draft length control
    adaptive: bool = True  # when off, every round drafts k_init tokens
    k_init: int = 4
    k_min: int = 1
    k_max: int = 16
    eta: float = 0.1  # EMA smoothing factor
    p_low: float = 0.4
    p_up: float = 0.8
    T_ref: float = 0.05  # seconds
    s: float = 2.0  # multiplicative step

    # parallel branching
    branching: bool = True
    F0: int = 4  # fan-out at the first drafted position
    rho: float = 0.5  # fan-out decay per position
    branch_budget: int = 16  # draft forward passes per verification wait

    # decoupled verification-correction: the device samples corrections from the target logits
    decoupled: bool = True

    greedy: bool = False  # argmax instead of sampling everywhere (debugging)
    max_new_tokens: int = 1024
    eos_token: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_init <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_init <= k_max, got {self.k_min}, {self.k_init}, {self.k_max}")
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if not self.p_low < self.p_up:
            raise ValueError(f"p_low={self.p_low} must be below p_up={self.p_up}")
        if self.s <= 1:
            raise ValueError(f"s must exceed 1, got {self.s}")
        if self.F0 < 1 or not 0 < self.rho < 1:
            raise ValueError(f"need F0 >= 1 and 0 < rho < 1, got F0={self.F0}, rho={self.rho}")
        if self.branch_budget < 0 or self.max_new_tokens < 1:
            raise ValueError("branch_budget must be nonnegative and max_new_tokens positive")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.gating else float('inf')
