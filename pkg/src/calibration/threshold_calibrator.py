"""
Split-calibrated activation threshold

Picks the lowest gate threshold whose activated calibration subset has a
Clopper-Pearson upper bound on its error rate of at most alpha.
"""
import json
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from errors import ContractError
from .clopper_pearson import cp_upper, cp_upper_zero_failures

logger = logging.getLogger(__name__)

DEFAULT_CALIBRATION_FRACTION = 0.10


@dataclass(frozen=True)
class CalibrationInput:
    """Calibration scores g(u) with the forced-on losses l(u)"""
    scores: Tuple[float, ...]
    losses: Tuple[int, ...]
    alpha: float = 0.10
    delta: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, 'scores', tuple(float(s) for s in self.scores))
        object.__setattr__(self, 'losses', tuple(int(l) for l in self.losses))
        if len(self.scores) != len(self.losses):
            raise ContractError(
                f"scores and losses differ in length: {len(self.scores)} vs {len(self.losses)}"
            )
        if any(l not in (0, 1) for l in self.losses):
            raise ContractError("losses must be 0 or 1")
        if any(math.isnan(s) for s in self.scores):
            raise ContractError("scores contain NaN")
        # alpha = 1 is the vacuous bound
        if not 0.0 < self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ContractError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def confidence(self) -> float:
        return 1.0 - self.delta


@dataclass(frozen=True)
class CalibrationResult:
    """Selected threshold and the statistics of its activated subset"""
    tau: float
    n: int
    k: int
    cp_upper: float
    coverage: float
    feasible: bool
    alpha: float
    delta: float
    n_calibration: int

    @classmethod
    def infeasible(cls, alpha: float, delta: float, n_calibration: int) -> 'CalibrationResult':
        return cls(tau=math.inf, n=0, k=0, cp_upper=1.0, coverage=0.0, feasible=False,
                   alpha=alpha, delta=delta, n_calibration=n_calibration)

    def to_dict(self) -> dict:
        result = asdict(self)
        # JSON has no infinity; null means never activate
        result['tau'] = None if math.isinf(self.tau) else self.tau
        return result

    @classmethod
    def from_dict(cls, record: dict) -> 'CalibrationResult':
        fields = {k: record[k] for k in cls.__dataclass_fields__}
        fields['tau'] = math.inf if fields['tau'] is None else float(fields['tau'])
        return cls(**fields)


def _candidate_table(scores: np.ndarray, losses: np.ndarray):
    """
    Unique thresholds in descending order with n(tau) and k(tau)

    Activation is g >= tau, so the set for a threshold is every unit
    up to the last one tied at that score.
    """
    order = np.argsort(-scores, kind='stable')
    s = scores[order]
    cum_losses = np.cumsum(losses[order])
    # last position of each tie group
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    return s[ends], ends + 1, cum_losses[ends]


def threshold_sweep(data: CalibrationInput) -> pd.DataFrame:
    """
    Every candidate threshold with its activated-subset statistics

    Returns:
        DataFrame with columns tau, n, k, risk, coverage, cp_upper, feasible,
        ordered by tau descending
    """
    scores = np.asarray(data.scores, dtype=np.float64)
    losses = np.asarray(data.losses, dtype=np.int64)
    columns = ['tau', 'n', 'k', 'risk', 'coverage', 'cp_upper', 'feasible']
    if scores.size == 0:
        return pd.DataFrame(columns=columns)

    taus, ns, ks = _candidate_table(scores, losses)
    bounds = [cp_upper(int(k), int(n), data.confidence) for n, k in zip(ns, ks)]
    return pd.DataFrame({
        'tau': taus,
        'n': ns,
        'k': ks,
        'risk': ks / ns,
        'coverage': ns / scores.size,
        'cp_upper': bounds,
        'feasible': [b <= data.alpha for b in bounds],
    }, columns=columns)


def calibrate_threshold(data: CalibrationInput) -> CalibrationResult:
    """
    Choose the activation threshold with maximal calibrated coverage

    Candidates are the unique calibration scores. Scanning from the lowest
    threshold (largest activated set) upward, the first candidate whose
    CP upper bound is <= alpha is returned. When none qualifies the result
    is the never-activate sentinel (tau = +inf, coverage 0).

    Args:
        data: Scores, losses, alpha and delta

    Returns:
        CalibrationResult
    """
    n_cal = len(data.scores)
    if n_cal == 0:
        logger.warning("Empty calibration set; threshold set to never activate")
        return CalibrationResult.infeasible(data.alpha, data.delta, 0)

    scores = np.asarray(data.scores, dtype=np.float64)
    losses = np.asarray(data.losses, dtype=np.int64)
    taus, ns, ks = _candidate_table(scores, losses)

    for i in range(len(taus) - 1, -1, -1):
        n, k = int(ns[i]), int(ks[i])
        if data.alpha < 1.0:
            if k / n > data.alpha:
                continue
            # smaller sets only get looser bounds
            if cp_upper_zero_failures(n, data.confidence) > data.alpha:
                break
        bound = cp_upper(k, n, data.confidence)
        if bound <= data.alpha:
            result = CalibrationResult(
                tau=float(taus[i]), n=n, k=k, cp_upper=bound, coverage=n / n_cal,
                feasible=True, alpha=data.alpha, delta=data.delta, n_calibration=n_cal,
            )
            logger.info("Calibrated tau=%.6f: n=%d, k=%d, cp_upper=%.4f, coverage=%.3f",
                        result.tau, n, k, bound, result.coverage)
            return result

    logger.warning("No threshold certifies risk <= %.3f at confidence %.3f over %d units",
                   data.alpha, data.confidence, n_cal)
    return CalibrationResult.infeasible(data.alpha, data.delta, n_cal)


def calibration_split(n: int, fraction: float = DEFAULT_CALIBRATION_FRACTION,
                      seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Seeded i.i.d. split of unit indices into calibration and held-out parts

    Returns:
        (calibration_indices, rest_indices), each sorted
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"fraction must lie in (0, 1), got {fraction}")
    if n < 2:
        raise ContractError(f"Need at least 2 units to split, got {n}")
    rest, cal = train_test_split(np.arange(n), test_size=fraction, random_state=seed, shuffle=True)
    return np.sort(cal), np.sort(rest)


def load_calibration(path: Union[str, Path]) -> CalibrationResult:
    with open(path, 'r') as f:
        record = json.load(f)
    return CalibrationResult.from_dict(record.get('calibration', record))


def read_score_file(path: Union[str, Path]) -> Tuple[List[float], List[int]]:
    """
    Read a two-column (score, loss) CSV file

    Raises:
        ContractError: if the columns are missing
    """
    df = pd.read_csv(path)
    if not {'score', 'loss'} <= set(df.columns):
        raise ContractError(f"{path}: expected columns 'score' and 'loss', got {list(df.columns)}")
    return df['score'].astype(float).tolist(), df['loss'].astype(int).tolist()


def write_score_file(scores: Sequence[float], losses: Sequence[int], path: Union[str, Path]) -> None:
    pd.DataFrame({'score': list(scores), 'loss': list(losses)}).to_csv(path, index=False, float_format='%.17g')
