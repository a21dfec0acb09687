"""
Visual token selection for drafting: query relevance, inter-layer activity, blended top-M
preselection and subspace-energy reduction to B_vis tokens.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pkg_resources
from dataclasses_json import dataclass_json

from covspec.errors import ZeroNormEmbedding, NoKeywords, InvalidK, InvalidM, InvalidRank
from covspec.models import VisualTokenSet, Query
from covspec.probcore import SeededRng

SELECTION_MODES = ('covspec', 'random', 'full')
NOISE_FLOOR = 1e-10  # relative to the largest singular value


@dataclass_json
@dataclass
class SelectionConfig:
    mode: str = 'covspec'  # covspec | random | full
    lam: float = 0.5  # weight of the query score in the blend
    M: Optional[int] = None  # preselected tokens, 2 * B_vis when unset
    rank: Optional[int] = None  # retained SVD rank, min(32, M - 1, d - 1) when unset
    B_vis: int = 64
    K: int = 3  # late layers used for activity

    def resolve(self, N: int, d: int, L: int) -> Tuple[int, int]:
        """
        returns (M, rank) for a visual set of N tokens of dimension d with L layers,
        checking every constraint between the knobs
        """
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {self.mode}, expected one of {SELECTION_MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        M = self.M if self.M is not None else min(2 * self.B_vis, N)
        rank = self.rank if self.rank is not None else min(32, M - 1, d - 1)
        if not 1 <= self.B_vis <= M:
            raise InvalidM(f"B_vis={self.B_vis} must be in [1, M={M}]")
        if M > N:
            raise InvalidM(f"M={M} exceeds the number of visual tokens {N}")
        if not 1 <= rank < min(M, d):
            raise InvalidRank(f"rank={rank} must be in [1, min(M={M}, d={d}))")
        if not 1 <= self.K <= L:
            raise InvalidK(f"K={self.K} must be in [1, L={L}]")
        return M, rank


@dataclass(frozen=True, eq=False)
class ScoreVector:
    values: np.ndarray
    kind: str  # query | activity | blended | energy

    def __len__(self):
        return len(self.values)


@lru_cache(maxsize=1)
def stopwords() -> frozenset:
    text = pkg_resources.resource_string('covspec', 'stopwords.txt').decode()
    return frozenset(w.strip() for w in text.split() if w.strip())


def split_terms(text: str) -> List[str]:
    return [w.strip('.,;:!?"\'()').lower() for w in text.split() if w.strip('.,;:!?"\'()')]


def keyword_mask(terms: Sequence[str]) -> np.ndarray:
    """
    marks every term that is not an English stopword as a keyword
    """
    words = stopwords()
    return np.array([t.lower() not in words for t in terms], dtype=bool)


def query_from_text(text: str, dim: int) -> Query:
    terms = split_terms(text)
    return Query.from_terms(terms, dim, keyword_mask(terms))


def _unit_rows(vectors: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormEmbedding(f"{what} contains a zero-norm embedding")
    return vectors / norms


def query_scores(visual: VisualTokenSet, keywords: Query) -> ScoreVector:
    """
    max cosine similarity of every visual token with the keyword embeddings
    """
    kw = keywords.keywords
    if len(kw) == 0:
        raise NoKeywords("query has no keywords")
    cos = _unit_rows(visual.embeddings, "visual token set") @ _unit_rows(kw, "keyword set").T
    return ScoreVector(np.clip(cos.max(axis=1), -1.0, 1.0), 'query')


def activity_scores(visual: VisualTokenSet, K: int) -> ScoreVector:
    """
    mean norm of the hidden-state change over the last K layers
    """
    L = visual.num_layers
    if not 1 <= K <= L:
        raise InvalidK(f"K={K} must be in [1, L={L}]")
    h = visual.hidden_states
    diffs = h[:, L - K + 1:L + 1] - h[:, L - K:L]
    return ScoreVector(np.linalg.norm(diffs, axis=2).mean(axis=1), 'activity')


def min_max(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


def blend_scores(q: ScoreVector, a: ScoreVector, lam: float) -> ScoreVector:
    if len(q) != len(a):
        raise ValueError(f"score vectors of different lengths {len(q)} and {len(a)}")
    return ScoreVector(lam * min_max(q.values) + (1 - lam) * min_max(a.values), 'blended')


def top_indices(values: np.ndarray, count: int) -> np.ndarray:
    """
    indices of the `count` largest values, ties to the lower index, in ascending index order
    """
    order = np.argsort(-values, kind='stable')
    return np.sort(order[:count])


def preselect_top_m(scores: ScoreVector, M: int) -> np.ndarray:
    if not 1 <= M <= len(scores):
        raise InvalidM(f"M={M} must be in [1, {len(scores)}]")
    return top_indices(scores.values, M)


def _gram_eigh(gram: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    eigenpairs of a symmetric positive semi-definite matrix, descending
    """
    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = np.maximum(eigvals[::-1], 0.0)
    eigvecs = eigvecs[:, ::-1]
    sigma = np.sqrt(eigvals)
    if sigma.size and sigma[0] > 0:
        sigma[sigma < NOISE_FLOOR * sigma[0]] = 0.0
    return sigma, eigvecs


def truncated_svd(vectors: np.ndarray, rank: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    rank-r truncated SVD of Z = vectors.T (one column per token) through the smaller Gram matrix

    @param vectors: (M, d) array, row i is z_i
    @param rank: r
    @return: (U_r (d, r), sigma_r (r,), V_r (M, r), all singular values)
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    M, d = vectors.shape
    if not 1 <= rank < min(M, d):
        raise InvalidRank(f"rank={rank} must be in [1, min(M={M}, d={d}))")
    if M <= d:
        sigma, V = _gram_eigh(vectors @ vectors.T)
        V_r = V[:, :rank]
        sigma_r = sigma[:rank]
        with np.errstate(divide='ignore', invalid='ignore'):
            U_r = np.where(sigma_r > 0, (vectors.T @ V_r) / sigma_r, 0.0)
    else:
        sigma, U = _gram_eigh(vectors.T @ vectors)
        U_r = U[:, :rank]
        sigma_r = sigma[:rank]
        with np.errstate(divide='ignore', invalid='ignore'):
            V_r = np.where(sigma_r > 0, (vectors @ U_r) / sigma_r, 0.0)
    return U_r, sigma_r, V_r, sigma[:min(M, d)]


def subspace_energies(vectors: np.ndarray, rank: int) -> ScoreVector:
    _, sigma_r, V_r, _ = truncated_svd(vectors, rank)
    return ScoreVector(np.sum((V_r * sigma_r) ** 2, axis=1), 'energy')


def svd_energy_select(vectors: np.ndarray, rank: int, B_vis: int) -> np.ndarray:
    """
    positions (into `vectors`) of the B_vis tokens with the largest rank-r subspace energy
    """
    M = len(vectors)
    if not 1 <= B_vis <= M:
        raise InvalidM(f"B_vis={B_vis} must be in [1, M={M}]")
    energies = subspace_energies(vectors, rank)
    return top_indices(energies.values, B_vis)


def select_visual_tokens(visual: VisualTokenSet, query: Query, config: SelectionConfig,
                         seed: int = 0) -> np.ndarray:
    """
    the reduced visual context, as ascending indices into `visual`
    """
    if config.mode == 'full':
        return np.arange(visual.count)
    if config.mode == 'random':
        if not 1 <= config.B_vis <= visual.count:
            raise InvalidM(f"B_vis={config.B_vis} must be in [1, {visual.count}]")
        generator = SeededRng(seed, 'tokensel/random').generator()
        return np.sort(generator.choice(visual.count, size=config.B_vis, replace=False))

    M, rank = config.resolve(visual.count, visual.dim, visual.num_layers)
    scores = blend_scores(query_scores(visual, query), activity_scores(visual, config.K), config.lam)
    preselected = preselect_top_m(scores, M)
    representations = visual.hidden_states[preselected, -1, :]
    kept = svd_energy_select(representations, rank, config.B_vis)
    return preselected[kept]
