"""
The device role: drafts over the reduced visual set, gates confident tokens, ships segments for
verification, prepares branches while it waits and commits what the edge sanctions.
"""
from typing import Dict, List, Optional, Tuple

import math
import numpy as np

from covspec.common import logger
from covspec.comm.codec import (Uplink, UplinkFull, DownlinkAccept, DownlinkReject, DownlinkCorrected)
from covspec.comm.f16 import f16_decode_array, f16_encode_array
from covspec.comm.payload import (ACCEPT, REJECT, CORRECTED, ChannelConfig, PayloadConfig, PayloadLedger,
                                  RoundRecord, downlink_bits, latency, message_bits)
from covspec.engine.branching import BranchPlan, plan_branches, resolve_branches
from covspec.engine.controller import LengthController
from covspec.engine.correction import correction_token
from covspec.engine.params import DraftingConfig
from covspec.engine.segment import (DraftSegment, GateDecision, VerificationOutcome, BonusToken,
                                    TargetLogits, CorrectedToken)
from covspec.errors import PreconditionViolation, ProtocolFault
from covspec.hash import tokens_digest
from covspec.models import ModelPair, VisualTokenSet, Query
from covspec.probcore import SeededRng, softmax, sample_with, greedy
from covspec.transport.endpoint import DeviceEndpoint, Delivery

CRITICAL = 'critical'
BRANCH = 'branch'


class DeviceDrafter:
    """
    Device state machine of one generation.

    Draft logits are cached by prefix, so a continuation drafted on a branch is a cache hit once
    the critical path reaches the same prefix. Every draft forward pass advances the device clock
    by `device_token_s`. Draft draws are indexed by absolute position, which makes the text
    independent of branch work and of the transport.
    """
    role = 'device'

    def __init__(self, models: ModelPair, visual: VisualTokenSet, query: Query,
                 config: DraftingConfig, seed: int, endpoint: DeviceEndpoint,
                 payload: PayloadConfig, channel: ChannelConfig, device_token_s: float,
                 ledger: Optional[PayloadLedger] = None):
        self.models = models
        self.visual = visual
        self.query = query
        self.config = config
        self.endpoint = endpoint
        self.payload = payload
        self.channel = channel
        self.device_token_s = device_token_s
        self.ledger = ledger if ledger is not None else PayloadLedger()
        self.controller = LengthController.from_config(config)
        self.draft_rng = SeededRng(seed, 'device/draft')
        self.correct_rng = SeededRng(seed, 'device/correct')

        self.committed: List[int] = []
        self.synced = 0  # committed tokens the edge already holds
        self._cache: Dict[Tuple[int, bytes], Tuple[np.ndarray, str]] = {}

        self.critical_passes = 0
        self.branch_passes = 0
        self.branch_saved = 0
        self.gated = 0
        self.drafted = 0
        self.accepted = 0
        self.idle_s = 0.0

    @property
    def clock(self):
        return self.endpoint.clock

    @property
    def vocab_size(self) -> int:
        return self.models.vocab.size

    def _logits(self, prefix: Tuple[int, ...], origin: str) -> np.ndarray:
        key = (len(prefix), tokens_digest(prefix))
        hit = self._cache.get(key)
        if hit is not None:
            logits, source = hit
            if origin == CRITICAL and source == BRANCH:
                self.branch_saved += 1
                self._cache[key] = (logits, CRITICAL)
            return logits
        logits = self.models.draft_logits(self.visual, self.query, prefix)
        self.clock.advance(self.device_token_s)
        if origin == CRITICAL:
            self.critical_passes += 1
        else:
            self.branch_passes += 1
        self._cache[key] = (logits, origin)
        return logits

    def _draw(self, prefix: Tuple[int, ...], dist: np.ndarray) -> int:
        if self.config.greedy:
            return greedy(dist)
        return sample_with(dist, self.draft_rng.at(len(prefix)).uniform())

    def _prune_cache(self):
        floor = len(self.committed)
        self._cache = {key: value for key, value in self._cache.items() if key[0] >= floor}

    # the branch drafter interface used by plan_branches
    def branch_logits(self, prefix: Tuple[int, ...]) -> np.ndarray:
        return self._logits(prefix, BRANCH)

    def branch_token(self, prefix: Tuple[int, ...]) -> int:
        return self._draw(prefix, softmax(self._logits(prefix, BRANCH)))

    def finished(self) -> bool:
        if len(self.committed) >= self.config.max_new_tokens:
            return True
        eos = self.config.eos_token
        return eos is not None and bool(self.committed) and self.committed[-1] == eos

    def draft_round(self) -> Optional[DraftSegment]:
        """
        Drafts until k low-margin tokens have accumulated, a confident token follows a started
        segment, EOS is drafted or the length limit is reached. Confident tokens met before the
        segment starts are committed at once.

        @return: the segment to verify, None when generation ended on gated tokens alone
        """
        gamma = self.config.effective_gamma
        eos = self.config.eos_token
        k = self.controller.k
        tokens: List[int] = []
        probs: List[float] = []
        while True:
            prefix = tuple(self.committed) + tuple(tokens)
            if len(prefix) >= self.config.max_new_tokens:
                break
            dist = softmax(self._logits(prefix, CRITICAL))
            token = self._draw(prefix, dist)
            if not GateDecision.of(dist, gamma).verify:
                if tokens:
                    break
                self.committed.append(token)
                self.gated += 1
                if token == eos:
                    break
                continue
            tokens.append(token)
            probs.append(float(dist[token]))
            if len(tokens) >= k or token == eos:
                break
        if not tokens:
            return None
        return DraftSegment(start_pos=len(self.committed), tokens=tuple(tokens), draft_token_probs=tuple(probs),
                            gated_prefix=tuple(self.committed[self.synced:]))

    def _uplink(self, segment: DraftSegment):
        if self.config.decoupled:
            return Uplink(gated=segment.gated_prefix, draft=segment.tokens,
                          draft_scores=f16_encode_array(np.log(segment.draft_token_probs)))
        base = tuple(self.committed)
        rows = [self._logits(base + segment.tokens[:j], CRITICAL) for j in range(len(segment))]
        return UplinkFull(gated=segment.gated_prefix, draft=segment.tokens, vocab_size=self.vocab_size,
                          draft_logits=f16_encode_array(np.stack(rows)))

    def _outcome(self, segment: DraftSegment, delivery: Delivery) -> VerificationOutcome:
        msg = delivery.message
        n = len(segment)
        if isinstance(msg, DownlinkAccept):
            if msg.accepted_len != n:
                raise ProtocolFault(f"bonus token with {msg.accepted_len} of {n} tokens accepted")
            return VerificationOutcome(accepted_len=n, draft_len=n, payload=BonusToken(msg.bonus))
        if isinstance(msg, (DownlinkReject, DownlinkCorrected)) and not 0 <= msg.accepted_len < n:
            raise ProtocolFault(f"rejection after {msg.accepted_len} accepted tokens of a {n} token draft")
        if isinstance(msg, DownlinkReject):
            if len(msg.target_logits) != self.vocab_size:
                raise ProtocolFault(f"target logits over {len(msg.target_logits)} tokens, "
                                    f"vocabulary has {self.vocab_size}")
            return VerificationOutcome(accepted_len=msg.accepted_len, draft_len=n,
                                       payload=TargetLogits(f16_decode_array(msg.target_logits)))
        if isinstance(msg, DownlinkCorrected):
            return VerificationOutcome(accepted_len=msg.accepted_len, draft_len=n,
                                       payload=CorrectedToken(msg.token))
        raise ProtocolFault(f"unexpected {type(msg).__name__} in reply to a verification request")

    def correct(self, outcome: VerificationOutcome, segment: DraftSegment) -> int:
        """
        samples the correction at the first rejected position from the received target logits
        and the cached draft logits
        """
        if outcome.full_accept or not isinstance(outcome.payload, TargetLogits):
            raise PreconditionViolation("correction needs a rejection carrying target logits")
        pos = segment.start_pos + outcome.accepted_len
        prefix = tuple(self.committed[:segment.start_pos]) + segment.tokens[:outcome.accepted_len]
        draft_logits = self._logits(prefix, CRITICAL)
        rng = None if self.config.greedy else self.correct_rng.at(pos)
        return correction_token(outcome.payload.logits, draft_logits, rng)

    def verify_round(self, segment: DraftSegment) -> RoundRecord:
        """
        one round trip: send the segment, branch while waiting, commit the outcome
        """
        cfg = self.config
        k_in_force = self.controller.k
        msg = self._uplink(segment)
        S_up = message_bits(msg, self.payload, self.vocab_size)
        frame_up = self.endpoint.send(msg)

        plan: Optional[BranchPlan] = None
        delivery: Optional[Delivery] = None
        if cfg.branching and cfg.branch_budget > 0:
            def preempted() -> bool:
                nonlocal delivery
                if delivery is None:
                    delivery = self.endpoint.poll(self.clock.now)
                return delivery is not None
            plan = plan_branches(segment, self.committed, self, F0=cfg.F0, rho=cfg.rho,
                                 budget=cfg.branch_budget, max_len=cfg.max_new_tokens, preempted=preempted)
        if delivery is None:
            delivery = self.endpoint.recv()
        idle = self.clock.wait_until(delivery.time)
        self.idle_s += idle

        outcome = self._outcome(segment, delivery)
        a = outcome.accepted_len
        if isinstance(outcome.payload, BonusToken):
            kind, token = ACCEPT, outcome.payload.token
            self.committed.extend(segment.tokens)
            if segment.tokens[-1] != cfg.eos_token:
                self.committed.append(token)
            self.synced = len(self.committed)
        elif isinstance(outcome.payload, TargetLogits):
            kind, token = REJECT, self.correct(outcome, segment)
            self.committed.extend(segment.tokens[:a])
            self.synced = len(self.committed)
            self.committed.append(token)
        else:
            kind, token = CORRECTED, outcome.payload.token
            self.committed.extend(segment.tokens[:a])
            self.committed.append(token)
            self.synced = len(self.committed)
        self.drafted += len(segment)
        self.accepted += a

        branch = resolve_branches(plan, segment, a, token)
        reject_kind = REJECT if cfg.decoupled else CORRECTED
        T_rej = latency(S_up + downlink_bits(reject_kind, self.vocab_size, self.payload), self.channel)
        self.controller.update_length(a, len(segment), T_rej)
        self._prune_cache()

        S_down = message_bits(delivery.message, self.payload, self.vocab_size)
        record = RoundRecord(round=len(self.ledger.records), k=k_in_force, start_pos=segment.start_pos,
                             n_draft=len(segment), n_gated=len(segment.gated_prefix), n_acc=a, outcome=kind,
                             S_up=S_up, S_down=S_down,
                             T_up=latency(S_up, self.channel), T_down=latency(S_down, self.channel),
                             overhead_bytes=(frame_up - math.ceil(S_up / 8)) + (delivery.frame_bytes - math.ceil(S_down / 8)),
                             gated_bits=len(segment.gated_prefix) * self.payload.b_id,
                             branch_hit=branch is not None,
                             branch_tokens=plan.forward_passes if plan is not None else 0,
                             branch_saved=len(branch.continuation) if branch is not None else 0,
                             idle_s=idle)
        self.ledger.record(record)
        logger.verbose(f"round {record.round}: k={k_in_force} n_draft={record.n_draft} n_gated={record.n_gated} "
                       f"n_acc={a} {kind} S_up={S_up} S_down={S_down}"
                       + (f" branch hit (+{record.branch_saved})" if branch is not None else ""))
        return record

    def run(self) -> List[int]:
        """
        generates up to max_new_tokens tokens and closes the session
        """
        while not self.finished():
            segment = self.draft_round()
            if segment is None:
                break
            self.verify_round(segment)
        self.endpoint.close()
        del self.committed[self.config.max_new_tokens:]
        return self.committed
