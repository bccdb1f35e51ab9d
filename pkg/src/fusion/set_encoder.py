"""
Set encoder: one self-attention block followed by attention pooling
over a learned seed query. Inference only, float64.
"""
import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from errors import ContractError

logger = logging.getLogger(__name__)

SET_ENCODER_FORMAT = 'saver-set-encoder'
SET_ENCODER_FORMAT_VERSION = 1


class MultiheadAttentionBlock(nn.Module):
    """MAB(X, Y) = LN(H + FF(H)), H = LN(X + Attention(X, Y, Y))"""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln_0 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, dim))
        self.ln_1 = nn.LayerNorm(dim)

    def forward(self, query, x):
        att, weights = self.attn(query, x, x, need_weights=True, average_attn_weights=False)
        h = self.ln_0(query + att)
        return self.ln_1(h + self.ff(h)), weights


class SetEncoder(nn.Module):
    """
    SAB then PMA with a single seed vector

    Args:
        dim: Evidence vector dim
        heads: Attention heads, must divide dim
        ff_dim: Hidden width of the feed-forward sublayers
    """

    def __init__(self, dim: int, heads: int = 2, ff_dim: int = 32):
        super().__init__()
        if dim < 1 or heads < 1 or dim % heads != 0:
            raise ContractError(f"heads ({heads}) must divide dim ({dim})")
        self.dim = dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.init_seed: Optional[int] = None
        self.sab = MultiheadAttentionBlock(dim, heads, ff_dim)
        self.pma = MultiheadAttentionBlock(dim, heads, ff_dim)
        self.seed = nn.Parameter(torch.empty(1, 1, dim))
        nn.init.xavier_uniform_(self.seed)
        self.double()
        self.eval()

    @classmethod
    def seeded(cls, dim: int, heads: int = 2, ff_dim: int = 32, seed: int = 0) -> 'SetEncoder':
        """Default torch init under torch.manual_seed(seed), without touching the global RNG"""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            encoder = cls(dim, heads, ff_dim)
        encoder.init_seed = seed
        return encoder

    def forward(self, x):
        h, _ = self.sab(x, x)
        z, weights = self.pma(self.seed.expand(x.shape[0], -1, -1), h)
        return z[:, 0, :], weights[:, :, 0, :]

    def to_dict(self) -> dict:
        init = None if self.init_seed is None else {'generator': 'torch.manual_seed', 'seed': self.init_seed}
        return {
            'format': SET_ENCODER_FORMAT,
            'version': SET_ENCODER_FORMAT_VERSION,
            'dim': self.dim,
            'heads': self.heads,
            'ff_dim': self.ff_dim,
            'init': init,
            'state': {name: t.detach().cpu().tolist() for name, t in self.state_dict().items()},
        }

    @classmethod
    def from_dict(cls, record: dict) -> 'SetEncoder':
        if record.get('format') != SET_ENCODER_FORMAT or record.get('version') != SET_ENCODER_FORMAT_VERSION:
            raise ContractError(f"Not a version {SET_ENCODER_FORMAT_VERSION} set encoder record")
        encoder = cls(record['dim'], record['heads'], record['ff_dim'])
        state = {name: torch.tensor(values, dtype=torch.float64) for name, values in record['state'].items()}
        encoder.load_state_dict(state)
        encoder.init_seed = (record.get('init') or {}).get('seed')
        return encoder


def _evidence_tensor(evidence, encoder: SetEncoder) -> torch.Tensor:
    if len(evidence) == 0:
        raise ContractError("set_encode needs at least one evidence vector")
    x = np.asarray(np.vstack([np.asarray(v, dtype=np.float64) for v in evidence]))
    if x.shape[1] != encoder.dim:
        raise ContractError(f"Evidence dim {x.shape[1]} does not match encoder dim {encoder.dim}")
    return torch.from_numpy(x).unsqueeze(0)


def set_encode_with_attention(evidence, encoder: SetEncoder) -> Tuple[np.ndarray, np.ndarray]:
    """
    Encode an evidence set and return the pooling attention

    Returns:
        (z, attention): z of shape (dim,); attention of shape (heads, n),
        each row summing to 1 over the evidence elements
    """
    x = _evidence_tensor(evidence, encoder)
    with torch.no_grad():
        z, weights = encoder(x)
    return z[0].numpy().copy(), weights[0].numpy().copy()


def set_encode(evidence, encoder: SetEncoder) -> np.ndarray:
    """Permutation-invariant summary vector of an evidence set"""
    return set_encode_with_attention(evidence, encoder)[0]


def save_set_encoder(encoder: SetEncoder, path: Union[str, Path]) -> None:
    with open(path, 'w') as f:
        json.dump(encoder.to_dict(), f)


def load_set_encoder(path: Union[str, Path]) -> SetEncoder:
    with open(path, 'r') as f:
        return SetEncoder.from_dict(json.load(f))
