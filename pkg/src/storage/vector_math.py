"""
Vector math shared by gating, selection and fusion

Inputs may be float32; everything is accumulated in float64.
A zero-norm vector has similarity 0.0 with anything and is reported
through the degenerate flag instead of raising.
"""
import logging
from typing import Tuple

import numpy as np

from errors import ContractError

logger = logging.getLogger(__name__)


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError(f"Expected a vector, got shape {v.shape}")
    return v


def cosine_checked(a, b) -> Tuple[float, bool]:
    """
    Cosine similarity with a degenerate-input flag

    Returns:
        (similarity, degenerate): similarity in [-1, 1]; degenerate is True
        when either input has zero norm, in which case similarity is 0.0
    """
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise ContractError(f"Dimension mismatch: {a.shape[0]} vs {b.shape[0]}")

    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0, True

    sim = float(np.dot(a, b)) / (norm_a * norm_b)
    return float(np.clip(sim, -1.0, 1.0)), False


def cosine(a, b) -> float:
    """Cosine similarity; 0.0 for zero-norm inputs"""
    sim, degenerate = cosine_checked(a, b)
    if degenerate:
        logger.debug("Zero-norm vector in cosine(); treating as non-evidence")
    return sim


def cosine_matrix(query, vectors) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cosine similarity between one query and each row of a matrix

    Args:
        query: Vector of shape (d,)
        vectors: Matrix of shape (n, d)

    Returns:
        (similarities, degenerate): both of shape (n,)
    """
    q = _as_vector(query)
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != q.shape[0]:
        raise ContractError(f"Dimension mismatch: query {q.shape}, vectors {m.shape}")

    q_norm = np.linalg.norm(q)
    row_norms = np.linalg.norm(m, axis=1)
    degenerate = (row_norms == 0.0) | (q_norm == 0.0)

    sims = np.zeros(m.shape[0], dtype=np.float64)
    ok = ~degenerate
    sims[ok] = (m[ok] @ q) / (row_norms[ok] * q_norm)
    return np.clip(sims, -1.0, 1.0), degenerate


def pairwise_cosine(vectors) -> np.ndarray:
    """
    Symmetric cosine matrix with an exact unit diagonal

    Zero-norm rows get 0.0 off the diagonal.
    """
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"Expected a matrix, got shape {m.shape}")

    norms = np.linalg.norm(m, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = m / safe[:, None]
    unit[norms == 0.0] = 0.0

    sims = unit @ unit.T
    sims = np.clip((sims + sims.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(sims, 1.0)
    return sims
