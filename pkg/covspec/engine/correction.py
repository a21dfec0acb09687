"""
Residual correction at the first rejected position. The device runs it in the decoupled protocol,
the edge runs the same function when it corrects on the device's behalf.
"""
from typing import Optional

import numpy as np

from covspec.common import logger
from covspec.errors import EmptyResidual
from covspec.probcore import SeededRng, softmax, residual_dist, sample_with, greedy


def residual_correction(target_logits: np.ndarray, draft_logits: np.ndarray,
                        rng: Optional[SeededRng]) -> int:
    """
    samples the correction from the residual of the two distributions

    @param target_logits: target logits at the rejected position, as received
    @param draft_logits: draft logits at the same position
    @param rng: the correction stream positioned at the rejected position, None for argmax
    @return: the correction token; raises EmptyResidual when the distributions coincide
    """
    residual = residual_dist(softmax(target_logits), softmax(draft_logits))
    return greedy(residual) if rng is None else sample_with(residual, rng.uniform())


def correction_token(target_logits: np.ndarray, draft_logits: np.ndarray,
                     rng: Optional[SeededRng]) -> int:
    """
    residual_correction, falling back to the target distribution when float16 transport
    made the two distributions coincide
    """
    try:
        return residual_correction(target_logits, draft_logits, rng.at(rng.index) if rng else None)
    except EmptyResidual:
        logger.verbose("empty residual after float16 transport, sampling the target distribution")
        p_t = softmax(target_logits)
        return greedy(p_t) if rng is None else sample_with(p_t, rng.uniform())
