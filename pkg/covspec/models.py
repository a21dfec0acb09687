"""
Synthetic draft/target model pairs and synthetic visual inputs.

The models stand in for a small on-device vision-language model (draft) and a large edge model
(target). Both are deterministic functions of (visual context, query, prefix): a seeded hash of
the inputs is expanded into a Gaussian score vector and squashed into logits in [-4, 4].
"""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import hashlib
import pickle
import numpy as np
from dataclasses_json import dataclass_json

from covspec.common import logger
from covspec.errors import InvalidPlant, InvalidPrefix
from covspec.hash import key_from, tokens_digest, ids_digest
from covspec.probcore import LogitVector, SeededRng, Vocabulary

LOGIT_BOUND = 4.0
IMPOSSIBLE_LOGIT = -1e4  # exp underflows to exactly 0 in float64
MIN_WEIGHT = 0.05  # every visual token has some say in the logits

_KEY_MASK = 2**128 - 1


@dataclass_json
@dataclass
class VisualConfig:
    num_tokens: int = 768  # N
    dim: int = 64  # d
    num_layers: int = 4  # L
    num_planted: int = 32  # tokens planted close to a query keyword
    planted_cos: float = 0.95  # cosine of a planted token with its keyword
    planted_activity: float = 1.0  # per-layer increment norm of planted tokens
    background_activity: float = 0.1  # increments of the other tokens are uniform in [0, this)
    query: str = "what is the color of the umbrella held by the woman next to the red car"


@dataclass_json
@dataclass
class ModelConfig:
    vocab_size: int = 128
    agreement: float = 0.85  # 1.0 makes the draft model a copy of the target model


@dataclass(frozen=True, eq=False)
class VisualTokenSet:
    """
    Embeddings and per-layer hidden states of a set of visual tokens.

    A reduced set keeps the identity of the full set it was cut from (source_digest,
    source_importance) and the original ids of the retained tokens (token_ids).
    """
    embeddings: np.ndarray  # (N, d)
    hidden_states: np.ndarray  # (N, L + 1, d), layer 0 is the input embedding
    token_ids: np.ndarray  # (N,) ids in the full set
    source_importance: np.ndarray  # planted increment magnitude of every token of the full set
    source_digest: bytes

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ValueError(f"embeddings must be a non-empty (N, d) array, got {self.embeddings.shape}")
        n, d = self.embeddings.shape
        if self.hidden_states.ndim != 3 or self.hidden_states.shape[0] != n or self.hidden_states.shape[2] != d:
            raise ValueError(f"hidden states of shape {self.hidden_states.shape} do not match embeddings {self.embeddings.shape}")
        if self.hidden_states.shape[1] < 2:
            raise ValueError("at least one layer (L >= 1) of hidden states is required")
        if self.token_ids.shape != (n,):
            raise ValueError("one token id per visual token is required")

    @staticmethod
    def from_arrays(embeddings: np.ndarray,
                    hidden_states: np.ndarray,
                    importance: Optional[np.ndarray] = None) -> "VisualTokenSet":
        embeddings = np.asarray(embeddings, dtype=np.float64)
        hidden_states = np.asarray(hidden_states, dtype=np.float64)
        n = embeddings.shape[0]
        if importance is None:
            importance = np.zeros(n)
        m = hashlib.md5()
        m.update(embeddings.tobytes())
        m.update(hidden_states.tobytes())
        return VisualTokenSet(embeddings=embeddings,
                              hidden_states=hidden_states,
                              token_ids=np.arange(n),
                              source_importance=np.asarray(importance, dtype=np.float64),
                              source_digest=m.digest())

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_layers(self) -> int:
        return self.hidden_states.shape[1] - 1

    @property
    def source_count(self) -> int:
        return self.source_importance.shape[0]

    @property
    def importance(self) -> np.ndarray:
        return self.source_importance[self.token_ids]

    def is_full(self) -> bool:
        return self.count == self.source_count

    def subset(self, indices: Sequence[int]) -> "VisualTokenSet":
        """
        the tokens at the given positions of this set
        """
        indices = np.asarray(indices, dtype=np.int64)
        return VisualTokenSet(embeddings=self.embeddings[indices],
                              hidden_states=self.hidden_states[indices],
                              token_ids=self.token_ids[indices],
                              source_importance=self.source_importance,
                              source_digest=self.source_digest)


@dataclass(frozen=True, eq=False)
class Query:
    terms: Tuple[str, ...]
    embeddings: np.ndarray  # (len(terms), d)
    keyword_mask: np.ndarray  # (len(terms),) bool

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.terms) or self.keyword_mask.shape != (len(self.terms),):
            raise ValueError("one embedding and one keyword flag per query term are required")

    @staticmethod
    def from_terms(terms: Sequence[str], dim: int, keyword_mask: Optional[Sequence[bool]] = None) -> "Query":
        """
        builds a query with hash-seeded term embeddings

        @param terms: query terms in order
        @param dim: embedding dimension d
        @param keyword_mask: which terms are keywords (all of them by default)
        """
        terms = tuple(terms)
        embeddings = np.stack([term_embedding(t, dim) for t in terms]) if terms else np.zeros((0, dim))
        mask = np.ones(len(terms), dtype=bool) if keyword_mask is None else np.asarray(keyword_mask, dtype=bool)
        return Query(terms=terms, embeddings=embeddings, keyword_mask=mask)

    @property
    def keywords(self) -> np.ndarray:
        return self.embeddings[self.keyword_mask]

    @property
    def digest(self) -> bytes:
        return hashlib.md5('\x00'.join(self.terms).encode()).digest()

    def __len__(self):
        return len(self.terms)


def term_embedding(term: str, dim: int) -> np.ndarray:
    generator = np.random.Generator(np.random.Philox(key=key_from('term', term, dim) & _KEY_MASK))
    return generator.standard_normal(dim)


def gen_visual(seed: int, N: int, d: int, L: int, planted_keywords: Query,
               num_planted: int = 32,
               planted_cos: float = 0.95,
               planted_activity: float = 1.0,
               background_activity: float = 0.1) -> VisualTokenSet:
    """
    Synthetic visual tokens with planted ground truth.

    Planted tokens have cosine `planted_cos` with one of the keyword embeddings (keywords are
    used round robin) and per-layer hidden-state increments of norm `planted_activity`; all
    other tokens are Gaussian with increments of norm uniform in [0, background_activity).
    Activity scores over any number of late layers therefore equal the per-token increment norm.
    """
    if N < 1 or d < 1 or L < 1:
        raise ValueError(f"N, d and L must be positive, got N={N}, d={d}, L={L}")
    if num_planted > N:
        raise InvalidPlant(f"cannot plant {num_planted} tokens among {N}")
    keywords = planted_keywords.keywords
    if num_planted > 0 and len(keywords) == 0:
        raise InvalidPlant("planting tokens requires at least one keyword")
    if len(keywords) and keywords.shape[1] != d:
        raise InvalidPlant(f"keyword dimension {keywords.shape[1]} does not match d={d}")

    generator = SeededRng(seed, f'visual/{N}/{d}/{L}').generator()
    embeddings = generator.standard_normal((N, d))
    planted = generator.permutation(N)[:num_planted]
    importance = generator.uniform(0.0, background_activity, size=N) if background_activity > 0 else np.zeros(N)

    for j, i in enumerate(planted):
        q = keywords[j % len(keywords)]
        q_unit = q / np.linalg.norm(q)
        noise = embeddings[i] - (embeddings[i] @ q_unit) * q_unit
        noise_norm = np.linalg.norm(noise)
        noise_unit = noise / noise_norm if noise_norm > 0 else np.zeros(d)
        sine = np.sqrt(max(0.0, 1.0 - planted_cos ** 2))
        embeddings[i] = np.sqrt(d) * (planted_cos * q_unit + sine * noise_unit)
        importance[i] = planted_activity

    directions = generator.standard_normal((N, L, d))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    increments = directions * importance[:, None, None]
    hidden_states = np.concatenate([embeddings[:, None, :],
                                    embeddings[:, None, :] + np.cumsum(increments, axis=1)], axis=1)
    logger.debug(f"generated {N} visual tokens, planted {sorted(int(i) for i in planted)}")
    return VisualTokenSet.from_arrays(embeddings, hidden_states, importance)


def model_api_debugging(api_call: Callable):
    api_name = api_call.__name__
    def api_call_with_debug(self: "ModelPair", *args, **kwargs):
        if self._debug_dir is not None:
            debug_message_file = self._run_dir / f'{self._debug_message_number}.pickle'
            logger.debug(f'logging {api_name} call to {debug_message_file}')
            with debug_message_file.open('wb') as pickle_jar:
                pickle.dump((api_name, args, kwargs), pickle_jar)
            self._debug_message_number += 1
        return api_call(self, *args, **kwargs)
    return api_call_with_debug


class ModelPair:
    """
    Common API of a draft/target model pair.
    This class exposes the following methods:
        - `draft_logits`: logits of the on-device draft model over a (possibly reduced) visual set
        - `target_logits`: logits of the edge target model over the full visual set
    Every call is pickled to a numbered file when a debug directory is given.
    """
    vocab: Vocabulary

    def __init__(self, vocab: Vocabulary, debug_dir: Optional[Path] = None):
        """

        @param vocab: the shared output vocabulary
        @param debug_dir: a directory where all model calls will be logged for debugging purposes
        """
        self.vocab = vocab
        self._debug_dir = debug_dir

        if self._debug_dir is not None:
            self._debug_dir.mkdir(parents=True, exist_ok=True)

            run_dirs = [int(run_dir.name) for run_dir in self._debug_dir.glob('*')
                        if run_dir.is_dir() and run_dir.name.isdigit()]
            run_number = max(run_dirs) + 1 if run_dirs else 1

            self._run_dir = debug_dir / str(run_number)
            self._run_dir.mkdir()
            logger.info(f'running models in debug mode, calls will be stored at {self._run_dir}')

            self._debug_message_number = 0

    def _check_prefix(self, prefix: Sequence[int]) -> Tuple[int, ...]:
        prefix = tuple(int(t) for t in prefix)
        for t in prefix:
            if t not in self.vocab:
                raise InvalidPrefix(f"token {t} is outside the vocabulary of size {self.vocab.size}")
        return prefix

    @model_api_debugging
    def draft_logits(self, visual: VisualTokenSet, query: Query, prefix: Sequence[int]) -> LogitVector:
        return self._draft_logits(visual, query, self._check_prefix(prefix))

    @model_api_debugging
    def target_logits(self, visual: VisualTokenSet, query: Query, prefix: Sequence[int]) -> LogitVector:
        return self._target_logits(visual, query, self._check_prefix(prefix))

    def _draft_logits(self, visual, query, prefix) -> LogitVector:
        raise NotImplementedError

    def _target_logits(self, visual, query, prefix) -> LogitVector:
        raise NotImplementedError


@lru_cache(maxsize=16)
def _visual_basis(seed: int, source_count: int, vocab_size: int) -> np.ndarray:
    generator = SeededRng(seed, f'model/visual-basis/{source_count}/{vocab_size}').generator()
    return generator.standard_normal((source_count, vocab_size))


class SyntheticModelPair(ModelPair):
    """
    Hash-based draft/target pair.

    The target score vector is z = (c + v) / sqrt(2): c is a Gaussian vector seeded by
    (seed, full visual set, query, prefix); v is a signed, importance-weighted sum of fixed
    per-visual-token directions over the tokens the model sees, normalized so that v is
    standard Gaussian over the full set. Dropping visual tokens from the draft context removes
    their share of v. The draft score vector mixes the target construction over its own visual
    subset with independent hash noise, weighted by `agreement`.
    """

    def __init__(self, vocab: Union[Vocabulary, int], agreement: float, seed: int,
                 debug_dir: Optional[Path] = None):
        if isinstance(vocab, int):
            vocab = Vocabulary(vocab)
        if not 0.0 <= agreement <= 1.0:
            raise ValueError(f"agreement must be in [0, 1], got {agreement}")
        super().__init__(vocab=vocab, debug_dir=debug_dir)
        self.agreement = agreement
        self.seed = seed

    def _scores(self, visual: VisualTokenSet, query: Query, prefix, stream: str) -> Tuple[np.ndarray, float]:
        generator = np.random.Generator(np.random.Philox(
            key=key_from(self.seed, stream, visual.source_digest, query.digest, tokens_digest(prefix)) & _KEY_MASK))
        context = generator.standard_normal(self.vocab.size)
        sharpness = generator.random()
        signs = generator.integers(0, 2, size=visual.source_count) * 2.0 - 1.0

        weights = MIN_WEIGHT + visual.source_importance
        basis = _visual_basis(self.seed, visual.source_count, self.vocab.size)
        if visual.is_full():
            v = (weights * signs) @ basis
        else:
            ids = visual.token_ids
            v = (weights[ids] * signs[ids]) @ basis[ids]
        v = v / np.sqrt(np.sum(weights ** 2))
        return (context + v) / np.sqrt(2.0), sharpness

    def _noise(self, visual: VisualTokenSet, query: Query, prefix) -> Tuple[np.ndarray, float]:
        generator = np.random.Generator(np.random.Philox(
            key=key_from(self.seed, 'draft-noise', visual.source_digest, ids_digest(visual.token_ids),
                         query.digest, tokens_digest(prefix)) & _KEY_MASK))
        return generator.standard_normal(self.vocab.size), generator.random()

    @staticmethod
    def _squash(z: np.ndarray, sharpness: float) -> LogitVector:
        steepness = 0.5 + 3.0 * sharpness
        return LogitVector(LOGIT_BOUND * np.tanh(steepness * (z - z.max()) + 1.0))

    def _target_logits(self, visual, query, prefix) -> LogitVector:
        z, sharpness = self._scores(visual, query, prefix, 'core')
        return self._squash(z, sharpness)

    def _draft_logits(self, visual, query, prefix) -> LogitVector:
        a = self.agreement
        z, sharpness = self._scores(visual, query, prefix, 'core')
        if a < 1.0:
            noise, noise_sharpness = self._noise(visual, query, prefix)
            z = (a * z + (1 - a) * noise) / np.sqrt(a ** 2 + (1 - a) ** 2)
            sharpness = a * sharpness + (1 - a) * noise_sharpness
        return self._squash(z, sharpness)


class ScriptedModelPair(ModelPair):
    """
    Model pair whose logits are given by functions of the prefix, for hand-built scenarios.
    The visual context and query are ignored.
    """

    def __init__(self, vocab: Union[Vocabulary, int],
                 target: Callable[[Tuple[int, ...]], Sequence[float]],
                 draft: Callable[[Tuple[int, ...]], Sequence[float]],
                 debug_dir: Optional[Path] = None):
        if isinstance(vocab, int):
            vocab = Vocabulary(vocab)
        super().__init__(vocab=vocab, debug_dir=debug_dir)
        self._target = target
        self._draft = draft

    @staticmethod
    def from_probs(target_rows: Sequence[Sequence[float]],
                   draft_rows: Sequence[Sequence[float]]) -> "ScriptedModelPair":
        """
        the distributions at generated position j are target_rows[j] and draft_rows[j]
        (the last row is reused past the end)
        """
        target_logits = [probs_to_logits(p) for p in target_rows]
        draft_logits = [probs_to_logits(p) for p in draft_rows]
        return ScriptedModelPair(len(target_logits[0]),
                                 target=lambda prefix: target_logits[min(len(prefix), len(target_logits) - 1)],
                                 draft=lambda prefix: draft_logits[min(len(prefix), len(draft_logits) - 1)])

    def _target_logits(self, visual, query, prefix) -> LogitVector:
        return LogitVector(np.array(self._target(prefix), dtype=np.float64))

    def _draft_logits(self, visual, query, prefix) -> LogitVector:
        return LogitVector(np.array(self._draft(prefix), dtype=np.float64))


def probs_to_logits(probs: Sequence[float]) -> LogitVector:
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide='ignore'):
        return LogitVector(np.where(probs > 0, np.log(probs), IMPOSSIBLE_LOGIT))
