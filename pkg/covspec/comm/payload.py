"""
Payload sizes, channel latency and the per-session payload ledger.
"""
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import math
from dataclasses_json import dataclass_json

from covspec.comm.codec import Uplink, UplinkFull, DownlinkAccept, DownlinkReject, DownlinkCorrected, Fin
from covspec.errors import InvalidChannel, InvalidVocabulary

ACCEPT = 'accept'
REJECT = 'reject'
CORRECTED = 'corrected'
OUTCOME_KINDS = (ACCEPT, REJECT, CORRECTED)


@dataclass_json
@dataclass
class PayloadConfig:
    b_id: int = 32  # token id
    b_logit: int = 16  # draft logit (float16)
    b_logit_tar: int = 16  # target logit (float16)
    b_acc: int = 16  # accepted length
    b_bonus: int = 32  # bonus token
    b_rej: int = 16  # rejection position

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass_json
@dataclass
class ChannelConfig:
    bandwidth_hz: float = 5e6
    snr_db: float = 10.0

    def capacity(self) -> float:
        """
        bits per second
        """
        if self.bandwidth_hz <= 0:
            raise InvalidChannel(f"bandwidth must be positive, got {self.bandwidth_hz}")
        return self.bandwidth_hz * math.log2(1 + 10 ** (self.snr_db / 10))


def uplink_bits(n_draft: int, n_gated: int, cfg: PayloadConfig,
                full_logits_vocab: Optional[int] = None) -> int:
    """
    drafted tokens carry an id and one draft logit, gated context tokens an id only;
    with `full_logits_vocab` every drafted token carries the whole draft logit row instead
    """
    if n_draft < 0 or n_gated < 0:
        raise ValueError(f"token counts must be nonnegative, got n_draft={n_draft}, n_gated={n_gated}")
    logits_per_token = 1
    if full_logits_vocab is not None:
        if full_logits_vocab < 2:
            raise InvalidVocabulary(f"vocabulary size must be at least 2, got {full_logits_vocab}")
        logits_per_token = full_logits_vocab
    return (n_draft + n_gated) * cfg.b_id + n_draft * logits_per_token * cfg.b_logit


def downlink_bits(outcome_kind: str, vocab_size: int, cfg: PayloadConfig) -> int:
    if vocab_size < 2:
        raise InvalidVocabulary(f"vocabulary size must be at least 2, got {vocab_size}")
    if outcome_kind == ACCEPT:
        return cfg.b_acc + cfg.b_bonus
    if outcome_kind == REJECT:
        return cfg.b_rej + vocab_size * cfg.b_logit_tar
    if outcome_kind == CORRECTED:
        return cfg.b_rej + cfg.b_id
    raise ValueError(f"unknown outcome kind {outcome_kind}, expected one of {OUTCOME_KINDS}")


def latency(total_bits: int, channel: ChannelConfig) -> float:
    if total_bits < 0:
        raise ValueError(f"bits must be nonnegative, got {total_bits}")
    return total_bits / channel.capacity()


@dataclass_json
@dataclass
class RoundRecord:
    round: int
    k: int  # draft length in force for the round
    start_pos: int  # absolute position of the first drafted token
    n_draft: int
    n_gated: int
    n_acc: int
    outcome: str
    S_up: int
    S_down: int
    T_up: float
    T_down: float
    overhead_bytes: int = 0  # frame header and counter bytes, not part of S_up / S_down
    gated_bits: int = 0  # the share of S_up spent on gated context ids
    branch_hit: bool = False
    branch_tokens: int = 0  # draft forward passes spent on branches during the wait
    branch_saved: int = 0  # critical-path forward passes served from branch work
    idle_s: float = 0.0  # modeled time the device spent neither drafting nor branching

    @property
    def T_comm(self) -> float:
        return self.T_up + self.T_down


@dataclass
class PayloadLedger:
    uplink_bits: int = 0
    downlink_bits: int = 0
    overhead_bytes: int = 0
    records: List[RoundRecord] = field(default_factory=list)

    def record(self, rec: RoundRecord):
        self.records.append(rec)
        self.uplink_bits += rec.S_up
        self.downlink_bits += rec.S_down
        self.overhead_bytes += rec.overhead_bytes

    @property
    def total_bits(self) -> int:
        return self.uplink_bits + self.downlink_bits

    @property
    def gated_bits(self) -> int:
        return sum(r.gated_bits for r in self.records)

    @property
    def T_comm(self) -> float:
        return math.fsum(r.T_comm for r in self.records)

    @property
    def megabytes(self) -> float:
        return self.total_bits / 8 / 1e6

    def check_totals(self):
        up = sum(r.S_up for r in self.records)
        down = sum(r.S_down for r in self.records)
        if (up, down) != (self.uplink_bits, self.downlink_bits):
            raise AssertionError(f"ledger totals ({self.uplink_bits}, {self.downlink_bits}) "
                                 f"differ from the per-round sums ({up}, {down})")


def message_bits(msg, cfg: PayloadConfig, vocab_size: int) -> int:
    """
    payload bits of a wire message (frame header and counters excluded)
    """
    if isinstance(msg, Uplink):
        return uplink_bits(len(msg.draft), len(msg.gated), cfg)
    if isinstance(msg, UplinkFull):
        return uplink_bits(len(msg.draft), len(msg.gated), cfg, full_logits_vocab=msg.vocab_size)
    if isinstance(msg, DownlinkAccept):
        return downlink_bits(ACCEPT, vocab_size, cfg)
    if isinstance(msg, DownlinkReject):
        return downlink_bits(REJECT, len(msg.target_logits), cfg)
    if isinstance(msg, DownlinkCorrected):
        return downlink_bits(CORRECTED, vocab_size, cfg)
    if isinstance(msg, Fin):
        return 0
    raise TypeError(f"not a wire message: {type(msg).__name__}")
