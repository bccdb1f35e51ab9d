"""
Selective prediction metrics
Risk-activation-coverage curves, AURC and ActCov@alpha at the unit level.
The score source may be gate scores or decoder confidence.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import ContractError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RiskCoverageCurve:
    """One (coverage, risk) point per unit prefix, best scores first"""
    coverages: np.ndarray
    risks: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.coverages.tolist(), self.risks.tolist()))

    def __len__(self) -> int:
        return int(self.coverages.shape[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'coverage': self.coverages, 'risk': self.risks})


def risk_coverage(scores: Sequence[float], losses: Sequence[int]) -> RiskCoverageCurve:
    """
    Risk at every activation coverage

    Units are sorted by score descending (ties by original index); point i
    has coverage i/n and risk equal to the mean loss of the top i units.
    """
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(losses, dtype=np.float64)
    if s.shape != l.shape or s.ndim != 1:
        raise ContractError(f"scores and losses must be equal-length vectors, got {s.shape}, {l.shape}")
    if s.size == 0:
        raise ContractError("risk_coverage needs at least one unit")

    order = np.argsort(-s, kind='stable')
    counts = np.arange(1, s.size + 1, dtype=np.float64)
    risks = np.cumsum(l[order]) / counts
    return RiskCoverageCurve(coverages=counts / s.size, risks=risks)


def aurc(curve: RiskCoverageCurve) -> float:
    """Mean of the prefix risks"""
    if len(curve) == 0:
        raise ContractError("aurc needs a non-empty curve")
    return float(np.mean(curve.risks))


def act_cov_at(curve: RiskCoverageCurve, alpha: float) -> float:
    """Largest coverage whose prefix risk is <= alpha; 0.0 if none"""
    ok = curve.risks <= alpha
    if not np.any(ok):
        return 0.0
    return float(np.max(curve.coverages[ok]))


def merge_shards(shards: Sequence[Tuple[Sequence[float], Sequence[int]]]) -> RiskCoverageCurve:
    """Curve over the union of (scores, losses) shards, re-sorted deterministically"""
    scores = np.concatenate([np.asarray(s, dtype=np.float64) for s, _ in shards])
    losses = np.concatenate([np.asarray(l, dtype=np.float64) for _, l in shards])
    return risk_coverage(scores, losses)


def selective_summary(scores: Sequence[float], losses: Sequence[int], alpha: float = 0.10) -> dict:
    curve = risk_coverage(scores, losses)
    return {
        'n_units': len(curve),
        'aurc': aurc(curve),
        'act_cov': act_cov_at(curve, alpha),
        'alpha': alpha,
        'overall_risk': float(curve.risks[-1]),
    }


def write_curve(curve: RiskCoverageCurve, path: Union[str, Path]) -> None:
    """Two-column CSV (coverage, risk)"""
    curve.to_frame().to_csv(path, index=False, float_format='%.17g')
    logger.debug("Wrote %d curve points to %s", len(curve), path)
