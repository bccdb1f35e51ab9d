"""
Submodular Image Selector
Relevance plus relevance-weighted facility-location coverage, maximized
greedily under a cardinality budget K. Indices are 0-based.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

from errors import ContractError, ExhaustiveGuardError
from storage.vector_math import cosine_matrix, pairwise_cosine

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_IMAGES = 20
SYMMETRY_TOL = 1e-9
RANGE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class SimilarityBundle:
    """Rescaled query relevance r_tilde (N,) and image similarity d_tilde (N, N)"""
    r_tilde: np.ndarray
    d_tilde: np.ndarray

    @property
    def size(self) -> int:
        return int(self.r_tilde.shape[0])


@dataclass(frozen=True)
class SisWeights:
    lambda_rel: float = 1.0
    lambda_cov: float = 1.0

    def __post_init__(self):
        if self.lambda_rel < 0 or self.lambda_cov < 0:
            raise ContractError("SIS weights must be non-negative")
        if self.lambda_rel == 0 and self.lambda_cov == 0:
            raise ContractError("SIS weights cannot both be zero")


@dataclass
class EvidenceSelection:
    """Chosen image indices in pick order, with per-step gains"""
    chosen: List[int] = field(default_factory=list)
    gains: List[float] = field(default_factory=list)
    objective: float = 0.0
    budget: int = 0

    @property
    def is_empty(self) -> bool:
        return len(self.chosen) == 0

    def to_dict(self) -> dict:
        return {
            'chosen': [int(i) for i in self.chosen],
            'gains': [float(g) for g in self.gains],
            'objective': float(self.objective),
            'budget': int(self.budget),
        }


def rescale(r, d) -> SimilarityBundle:
    """
    Map cosine similarities from [-1, 1] to [0, 1]

    Raises:
        ContractError: values outside [-1, 1] beyond 1e-6, asymmetric d or a
        diagonal that is not 1
    """
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = r.shape[0]
    if r.ndim != 1 or d.shape != (n, n):
        raise ContractError(f"Need r of shape (N,) and d of shape (N, N), got {r.shape}, {d.shape}")
    for name, x in (('r', r), ('d', d)):
        if x.size and (np.min(x) < -1.0 - RANGE_SLACK or np.max(x) > 1.0 + RANGE_SLACK):
            raise ContractError(f"{name} has values outside [-1, 1]")
    if n and not np.allclose(d, d.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise ContractError("d must be symmetric")
    if n and not np.allclose(np.diag(d), 1.0, rtol=0.0, atol=SYMMETRY_TOL):
        raise ContractError("d must have a unit diagonal")

    r_tilde = (1.0 + np.clip(r, -1.0, 1.0)) / 2.0
    d_tilde = (1.0 + np.clip(d, -1.0, 1.0)) / 2.0
    d_tilde = (d_tilde + d_tilde.T) / 2.0
    np.fill_diagonal(d_tilde, 1.0)
    return SimilarityBundle(r_tilde=r_tilde, d_tilde=d_tilde)


def similarity_bundle(q, globals_) -> SimilarityBundle:
    """Relevance of each image to the query plus image-image similarity, rescaled"""
    g = np.asarray(globals_, dtype=np.float64)
    if g.shape[0] == 0:
        return SimilarityBundle(np.zeros(0), np.zeros((0, 0)))
    r, _ = cosine_matrix(q, g)
    return rescale(r, pairwise_cosine(g))


def _check_indices(A: Iterable[int], n: int) -> List[int]:
    idx = sorted(set(int(i) for i in A))
    if idx and (idx[0] < 0 or idx[-1] >= n):
        raise ContractError(f"Index set {idx} outside [0, {n})")
    return idx


def sis_objective(A: Iterable[int], bundle: SimilarityBundle, w: SisWeights) -> float:
    """
    F(A) = lambda_rel * sum_{i in A} r_i + lambda_cov * sum_j r_j * max_{i in A} d_ij

    F(empty) = 0.
    """
    idx = _check_indices(A, bundle.size)
    if not idx:
        return 0.0
    relevance = float(np.sum(bundle.r_tilde[idx]))
    coverage = float(np.dot(bundle.r_tilde, np.max(bundle.d_tilde[idx], axis=0)))
    return w.lambda_rel * relevance + w.lambda_cov * coverage


def _marginal_gains(bundle: SimilarityBundle, w: SisWeights, m: np.ndarray) -> np.ndarray:
    """Gain of adding each image given cached maxima m_j"""
    uplift = np.maximum(0.0, bundle.d_tilde - m[None, :])
    return w.lambda_rel * bundle.r_tilde + w.lambda_cov * (uplift @ bundle.r_tilde)


def greedy_select(bundle: SimilarityBundle, w: SisWeights, K: int) -> EvidenceSelection:
    """
    Greedy maximization with cached maxima

    Each round adds the image with the largest marginal gain (lowest index
    on ties) and updates m_j = max(m_j, d_tilde[i, j]). Stops after K picks
    or when the best gain is <= 0. O(N^2) per round.

    Args:
        bundle: Rescaled similarities
        w: Objective weights
        K: Budget, at least 1

    Returns:
        EvidenceSelection; empty when there are no images
    """
    if K < 1:
        raise ContractError(f"Budget K must be >= 1, got {K}")
    n = bundle.size
    m = np.zeros(n)
    available = np.ones(n, dtype=bool)
    chosen, gains = [], []

    for _ in range(min(K, n)):
        step = np.where(available, _marginal_gains(bundle, w, m), -np.inf)
        best = int(np.argmax(step))
        if step[best] <= 0.0:
            logger.debug("Greedy stopped early: best gain %.3g", step[best])
            break
        chosen.append(best)
        gains.append(float(step[best]))
        available[best] = False
        m = np.maximum(m, bundle.d_tilde[best])

    return EvidenceSelection(chosen, gains, sis_objective(chosen, bundle, w), K)


def naive_greedy_select(bundle: SimilarityBundle, w: SisWeights, K: int) -> EvidenceSelection:
    """Greedy that recomputes F(A + i) - F(A) from scratch each round"""
    if K < 1:
        raise ContractError(f"Budget K must be >= 1, got {K}")
    chosen, gains = [], []
    current = 0.0
    for _ in range(min(K, bundle.size)):
        best, best_gain = -1, -np.inf
        for i in range(bundle.size):
            if i in chosen:
                continue
            gain = sis_objective(chosen + [i], bundle, w) - current
            if gain > best_gain:
                best, best_gain = i, gain
        if best_gain <= 0.0:
            break
        chosen.append(best)
        gains.append(best_gain)
        current += best_gain
    return EvidenceSelection(chosen, gains, sis_objective(chosen, bundle, w), K)


def _selection_in_order(order: Sequence[int], bundle: SimilarityBundle,
                        w: SisWeights, K: int) -> EvidenceSelection:
    chosen, gains = [], []
    previous = 0.0
    for i in order:
        chosen.append(int(i))
        value = sis_objective(chosen, bundle, w)
        gains.append(value - previous)
        previous = value
    return EvidenceSelection(chosen, gains, previous, K)


def brute_force_select(bundle: SimilarityBundle, w: SisWeights, K: int) -> EvidenceSelection:
    """
    Exact maximizer of F over all subsets of size <= K

    Ties go to the lexicographically smallest index tuple.

    Raises:
        ExhaustiveGuardError: more than 20 images
    """
    n = bundle.size
    if n > BRUTE_FORCE_MAX_IMAGES:
        raise ExhaustiveGuardError(
            f"Exhaustive search over {n} images exceeds the limit of {BRUTE_FORCE_MAX_IMAGES}"
        )
    best, best_value = (), 0.0
    for size in range(1, min(K, n) + 1):
        for combo in itertools.combinations(range(n), size):
            value = sis_objective(combo, bundle, w)
            if value > best_value or (value == best_value and combo < best):
                best, best_value = combo, value
    return _selection_in_order(best, bundle, w, K)


def topk_relevance_select(bundle: SimilarityBundle, w: SisWeights, K: int) -> EvidenceSelection:
    """Baseline: the K most relevant images, ignoring redundancy"""
    if K < 1:
        raise ContractError(f"Budget K must be >= 1, got {K}")
    order = np.lexsort((np.arange(bundle.size), -bundle.r_tilde))[:K]
    return _selection_in_order(order, bundle, w, K)


def all_images_select(bundle: SimilarityBundle, w: SisWeights, K: int) -> EvidenceSelection:
    """Baseline: every image, no selection"""
    return _selection_in_order(range(bundle.size), bundle, w, bundle.size)


SELECTORS = {
    'sis': greedy_select,
    'topk': topk_relevance_select,
    'all': all_images_select,
}


def get_selector(name: str):
    try:
        return SELECTORS[name]
    except KeyError:
        raise ContractError(f"Unknown selector {name!r}; choose from {sorted(SELECTORS)}") from None
