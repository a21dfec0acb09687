"""
Probability and sampling primitives shared by the device and edge roles.

Distributions and logits are plain 1-d float64 numpy arrays; the NewTypes
below only document which of the two a function expects.
"""
from dataclasses import dataclass
from typing import NewType

import numpy as np

from covspec.errors import (InvalidLogits, TooFewTokens, DegenerateDraftProb,
                            EmptyResidual, InvalidVocabulary)
from covspec.hash import stable_key

LogitVector = NewType('LogitVector', np.ndarray)
ProbDist = NewType('ProbDist', np.ndarray)

PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Vocabulary:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise InvalidVocabulary(f"vocabulary size must be at least 2, got {self.size}")

    def __contains__(self, token) -> bool:
        return 0 <= int(token) < self.size


def is_prob_dist(probs: np.ndarray, atol: float = PROB_TOLERANCE) -> bool:
    probs = np.asarray(probs)
    return bool(probs.ndim == 1 and np.all(probs >= 0) and abs(probs.sum() - 1.0) <= atol)


class SeededRng:
    """
    Counter-based random stream.

    A stream is identified by (seed, stream name); draw number i of the stream is a pure
    function of (seed, stream, i) so any process can reproduce it. The Philox block
    counter is i // 4 and the word within the block is i % 4.
    """

    def __init__(self, seed: int, stream: str, index: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = stream
        self.index = index
        self._key = stable_key(seed, stream) & (2**128 - 1)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream!r}, index={self.index})"

    def at(self, index: int) -> "SeededRng":
        """
        the same stream positioned at draw `index`
        """
        return SeededRng(self.seed, self.stream, index)

    def fork(self, name: str) -> "SeededRng":
        """
        an independent named sub-stream
        """
        return SeededRng(self.seed, f"{self.stream}/{name}")

    def uniforms(self, n: int) -> np.ndarray:
        block, offset = divmod(self.index, 4)
        generator = np.random.Generator(np.random.Philox(key=self._key, counter=block))
        draws = generator.random(offset + n)[offset:]
        self.index += n
        return draws

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def generator(self) -> np.random.Generator:
        """
        a numpy generator over the whole stream, for bulk draws that are not position indexed
        """
        return np.random.Generator(np.random.Philox(key=self._key))

    def integers(self, high: int, n: int) -> np.ndarray:
        """
        n integers in [0, high) from consecutive draws
        """
        return np.minimum((self.uniforms(n) * high).astype(np.int64), high - 1)


def softmax(logits: LogitVector) -> ProbDist:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or not np.all(np.isfinite(logits)):
        raise InvalidLogits("logits must be a finite 1-d vector")
    e = np.exp(logits - logits.max())  # avoid overflow
    return ProbDist(e / e.sum())


def margin(dist: ProbDist) -> float:
    """
    top-1 minus top-2 probability (0 on a tie at the top)
    """
    dist = np.asarray(dist)
    if dist.shape[0] < 2:
        raise TooFewTokens(f"margin needs at least 2 tokens, got {dist.shape[0]}")
    top2 = np.partition(dist, -2)[-2:]
    return float(max(top2[1] - top2[0], 0.0))


def acceptance_prob(p_t: float, p_d: float) -> float:
    if p_d <= 0:
        raise DegenerateDraftProb(f"drafted token has draft probability {p_d}")
    if p_t < 0:
        raise ValueError(f"target probability must be nonnegative, got {p_t}")
    return min(1.0, p_t / p_d)


def residual_dist(p_t: ProbDist, p_d: ProbDist) -> ProbDist:
    p_t = np.asarray(p_t, dtype=np.float64)
    p_d = np.asarray(p_d, dtype=np.float64)
    if p_t.shape != p_d.shape:
        raise ValueError(f"distributions over different vocabularies: {p_t.shape} vs {p_d.shape}")
    positive = np.where(p_t > p_d, p_t - p_d, 0.0)
    total = positive.sum()
    if total <= 0:
        raise EmptyResidual("target and draft distributions coincide")
    return ProbDist(positive / total)


def sample_with(dist: ProbDist, u: float) -> int:
    """
    inverse-CDF lookup of a uniform draw u in [0, 1), tokens in ascending id order
    """
    cdf = np.cumsum(dist)
    token = int(np.searchsorted(cdf, u, side='right'))
    if token >= len(cdf):
        # u fell into the rounding gap above cdf[-1]
        token = int(np.flatnonzero(np.asarray(dist) > 0)[-1])
    return token


def sample(dist: ProbDist, rng: SeededRng) -> int:
    return sample_with(dist, rng.uniform())


def greedy(dist: ProbDist) -> int:
    return int(np.argmax(dist))
