"""
The edge role: keeps the committed context in sync with the device and verifies drafted
segments against the target model over the full visual set.
"""
from typing import List, Optional

import numpy as np

from covspec.common import logger
from covspec.comm.codec import (AnyMessage, Uplink, UplinkFull, DownlinkAccept, DownlinkReject,
                                DownlinkCorrected, Fin)
from covspec.comm.f16 import f16_decode_array, f16_encode_array, f16_roundtrip
from covspec.engine.correction import correction_token
from covspec.engine.segment import DraftSegment, VerificationOutcome, BonusToken, TargetLogits
from covspec.errors import ContextDesync, ProtocolFault
from covspec.models import ModelPair, VisualTokenSet, Query
from covspec.probcore import SeededRng, softmax, acceptance_prob, sample_with, greedy


def quantized_log_prob(p: float) -> float:
    """
    the probability after its log went through float16 (log 0 saturates and maps back to 0)
    """
    with np.errstate(divide='ignore'):
        return float(np.exp(f16_roundtrip([np.log(p)])[0]))


class EdgeVerifier:
    """
    Answers verification requests.

    In the decoupled protocol a rejection is answered with the target logits and the device
    corrects. For UPLINK_FULL requests, and for every request when `reference_draft_visual`
    is given, the edge corrects itself and answers with the corrected token; the reference
    variant recomputes the exact draft logits with its own copy of the draft model.
    """
    role = 'edge'

    def __init__(self, models: ModelPair, visual: VisualTokenSet, query: Query, seed: int,
                 greedy: bool = False,
                 reference_draft_visual: Optional[VisualTokenSet] = None,
                 verify_rng: Optional[SeededRng] = None):
        self.models = models
        self.visual = visual
        self.query = query
        self.greedy = greedy
        self.reference_draft_visual = reference_draft_visual
        self.verify_rng = verify_rng if verify_rng is not None else SeededRng(seed, 'edge/verify')
        self.bonus_rng = SeededRng(seed, 'edge/bonus')
        self.correct_rng = SeededRng(seed, 'device/correct')
        self.context: List[int] = []
        self.rounds = 0
        self.target_passes = 0

    def __call__(self, msg: AnyMessage) -> Optional[AnyMessage]:
        return self.handle(msg)

    def _target_logits(self, prefix) -> np.ndarray:
        self.target_passes += 1
        return self.models.target_logits(self.visual, self.query, prefix)

    def handle(self, msg: AnyMessage) -> Optional[AnyMessage]:
        if isinstance(msg, Fin):
            logger.verbose(f"edge session finished after {self.rounds} rounds")
            return None
        if isinstance(msg, Uplink):
            probs = np.exp(f16_decode_array(msg.draft_scores))
            segment = self._segment(msg.gated, msg.draft, probs)
            outcome = self.verify(segment)
            if outcome.full_accept:
                return DownlinkAccept(accepted_len=outcome.accepted_len, bonus=outcome.payload.token)
            if self.reference_draft_visual is not None:
                draft_logits = self.models.draft_logits(self.reference_draft_visual, self.query,
                                                        self._rejected_prefix(segment, outcome))
                return self._corrected(segment, outcome, draft_logits)
            return DownlinkReject(accepted_len=outcome.accepted_len,
                                  target_logits=f16_encode_array(outcome.payload.logits))
        if isinstance(msg, UplinkFull):
            if msg.vocab_size != self.models.vocab.size:
                raise ProtocolFault(f"draft logits over {msg.vocab_size} tokens, the edge vocabulary has "
                                    f"{self.models.vocab.size}")
            rows = f16_decode_array(msg.draft_logits)
            probs = [quantized_log_prob(softmax(row)[t]) for row, t in zip(rows, msg.draft)]
            segment = self._segment(msg.gated, msg.draft, probs)
            outcome = self.verify(segment)
            if outcome.full_accept:
                return DownlinkAccept(accepted_len=outcome.accepted_len, bonus=outcome.payload.token)
            return self._corrected(segment, outcome, rows[outcome.accepted_len])
        raise ProtocolFault(f"the edge cannot handle {type(msg).__name__}")

    def _segment(self, gated, draft, probs) -> DraftSegment:
        start_pos = len(self.context) + len(gated)
        return DraftSegment(start_pos=start_pos, tokens=tuple(draft),
                            draft_token_probs=tuple(float(p) for p in probs), gated_prefix=tuple(gated))

    def _rejected_prefix(self, segment: DraftSegment, outcome: VerificationOutcome):
        return tuple(self.context[:segment.start_pos + outcome.accepted_len])

    def _corrected(self, segment: DraftSegment, outcome: VerificationOutcome,
                   draft_logits: np.ndarray) -> DownlinkCorrected:
        pos = segment.start_pos + outcome.accepted_len
        rng = None if self.greedy else self.correct_rng.at(pos)
        token = correction_token(outcome.payload.logits, draft_logits, rng)
        self.context.append(token)
        return DownlinkCorrected(accepted_len=outcome.accepted_len, token=token)

    def verify(self, segment: DraftSegment) -> VerificationOutcome:
        """
        Verifies the segment position by position and extends the context with everything the
        device will commit, except a correction the device samples itself.

        Position t is accepted when u_t <= min(1, p_t / p_d) with u_t the verification draw at
        t; both probabilities are compared after float16 transport of their logs.
        """
        if segment.context_len != len(self.context):
            raise ContextDesync(f"segment builds on {segment.context_len} committed tokens, "
                                f"the edge holds {len(self.context)}")
        self.context.extend(segment.gated_prefix)
        self.rounds += 1
        prefix = list(self.context)
        for j, (token, p_d) in enumerate(zip(segment.tokens, segment.draft_token_probs)):
            logits = self._target_logits(prefix)
            alpha = acceptance_prob(quantized_log_prob(softmax(logits)[token]), p_d)
            u = self.verify_rng.at(segment.start_pos + j).uniform()
            if not (alpha > 0 and u <= alpha):
                logger.debug(f"edge rejects position {segment.start_pos + j} (alpha={alpha:.4f}, u={u:.4f})")
                self.context.extend(segment.tokens[:j])
                return VerificationOutcome(accepted_len=j, draft_len=len(segment),
                                           payload=TargetLogits(f16_roundtrip(logits)))
            prefix.append(token)

        p_t = softmax(self._target_logits(prefix))
        bonus_pos = segment.start_pos + len(segment)
        bonus = greedy(p_t) if self.greedy else sample_with(p_t, self.bonus_rng.at(bonus_pos).uniform())
        self.context.extend(segment.tokens)
        self.context.append(bonus)
        return VerificationOutcome(accepted_len=len(segment), draft_len=len(segment), payload=BonusToken(bonus))
