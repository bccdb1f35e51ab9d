"""
Linear projection heads and span / pair representations
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import ContractError
from storage.embedding_io import EmbeddingMatrix

PROJECTION_FORMAT = 'saver-projection'
PROJECTION_FORMAT_VERSION = 1
N_DISTANCE_FEATURES = 3

Span = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class ProjectionHead:
    """x -> x @ matrix + bias, matrix of shape (dim_in, dim_out)"""
    matrix: np.ndarray
    bias: np.ndarray
    init_seed: Optional[int] = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if m.ndim != 2 or b.shape != (m.shape[1],):
            raise ContractError(f"Projection needs matrix (in, out) and bias (out,), got {m.shape}, {b.shape}")
        m.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, 'matrix', m)
        object.__setattr__(self, 'bias', b)

    @property
    def dim_in(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim_out(self) -> int:
        return int(self.matrix.shape[1])

    @classmethod
    def identity(cls, dim: int) -> 'ProjectionHead':
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def seeded(cls, dim_in: int, dim_out: int, seed: int) -> 'ProjectionHead':
        """Gaussian init with std 1/sqrt(dim_in) from np.random.default_rng(seed)"""
        rng = np.random.default_rng(seed)
        matrix = rng.normal(0.0, 1.0 / math.sqrt(dim_in), size=(dim_in, dim_out))
        return cls(matrix, np.zeros(dim_out), init_seed=seed)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim_in:
            raise ContractError(f"Projection expects input dim {self.dim_in}, got {x.shape[-1]}")
        return x @ self.matrix + self.bias

    def to_dict(self) -> dict:
        init = None
        if self.init_seed is not None:
            init = {'generator': 'numpy.default_rng.normal', 'seed': self.init_seed}
        return {
            'format': PROJECTION_FORMAT,
            'version': PROJECTION_FORMAT_VERSION,
            'dim_in': self.dim_in,
            'dim_out': self.dim_out,
            'matrix': self.matrix.tolist(),
            'bias': self.bias.tolist(),
            'init': init,
        }

    @classmethod
    def from_dict(cls, record: dict) -> 'ProjectionHead':
        if record.get('format') != PROJECTION_FORMAT or record.get('version') != PROJECTION_FORMAT_VERSION:
            raise ContractError(f"Not a version {PROJECTION_FORMAT_VERSION} projection record")
        init = record.get('init') or {}
        head = cls(np.asarray(record['matrix'], dtype=np.float64).reshape(record['dim_in'], record['dim_out']),
                   np.asarray(record['bias'], dtype=np.float64),
                   init_seed=init.get('seed'))
        return head


def span_rep(H: EmbeddingMatrix, a: int, b: int, proj: ProjectionHead) -> np.ndarray:
    """
    Span representation: proj([H_a ; H_b ; mean(H_a..H_b)])

    Only rows a..b are read.
    """
    if not (0 <= a <= b < H.rows):
        raise ContractError(f"Span ({a},{b}) outside token range [0, {H.rows})")
    rows = H.data[a:b + 1].astype(np.float64)
    x = np.concatenate([rows[0], rows[-1], rows.mean(axis=0)])
    return proj.apply(x)


def distance_features(s_h: Span, s_t: Span, n_tokens: Optional[int] = None) -> np.ndarray:
    """
    [order flag, log(1 + gap), |midpoint_h - midpoint_t| / n_tokens]

    order flag is +1 when the head span comes first (or the spans coincide)
    and -1 otherwise; gap counts tokens strictly between the spans.
    """
    (ah, bh), (at, bt) = s_h, s_t
    if n_tokens is None:
        n_tokens = max(bh, bt) + 1
    if n_tokens < 1:
        raise ContractError("n_tokens must be >= 1")
    order = 1.0 if (ah, bh) <= (at, bt) else -1.0
    gap = max(0, max(ah, at) - min(bh, bt) - 1)
    mid_dist = abs((ah + bh) / 2.0 - (at + bt) / 2.0) / n_tokens
    return np.array([order, math.log1p(gap), mid_dist], dtype=np.float64)


def pair_features(h_head, h_tail, s_h: Span, s_t: Span, n_tokens: Optional[int] = None) -> np.ndarray:
    """u = [h_head ; h_tail ; distance features]"""
    return np.concatenate([
        np.asarray(h_head, dtype=np.float64),
        np.asarray(h_tail, dtype=np.float64),
        distance_features(s_h, s_t, n_tokens),
    ])


def pair_rep(h_head, h_tail, s_h: Span, s_t: Span, proj: ProjectionHead,
             n_tokens: Optional[int] = None) -> np.ndarray:
    """Projected pair representation proj(u)"""
    return proj.apply(pair_features(h_head, h_tail, s_h, s_t, n_tokens))
