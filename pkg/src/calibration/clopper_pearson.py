"""
Exact binomial tail and Clopper-Pearson upper confidence bound
"""
import math
from functools import lru_cache

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln, logsumexp

from errors import DomainError

BISECT_XTOL = 1e-12


def _check_counts(k: int, n: int):
    if n < 0 or k < 0 or k > n:
        raise DomainError(f"Need 0 <= k <= n, got k={k}, n={n}")


def binom_cdf(k: int, n: int, p: float) -> float:
    """
    P(Bin(n, p) <= k), summed in log space

    Args:
        k: Number of failures
        n: Number of trials
        p: Failure probability in [0, 1]
    """
    _check_counts(k, n)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    if k == n or p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0

    j = np.arange(k + 1, dtype=np.float64)
    log_terms = (
        gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
        + j * math.log(p) + (n - j) * math.log1p(-p)
    )
    return float(min(1.0, math.exp(logsumexp(log_terms))))


@lru_cache(maxsize=65536)
def cp_upper(k: int, n: int, confidence: float) -> float:
    """
    Clopper-Pearson one-sided upper bound on a binomial proportion

    Smallest p with binom_cdf(k, n, p) <= 1 - confidence, found by bisection.

    Args:
        k: Observed failures
        n: Trials, at least 1
        confidence: 1 - delta, in (0, 1)

    Returns:
        Upper bound in [k/n, 1]; exactly 1.0 when k == n

    Raises:
        DomainError: n < 1, k outside [0, n] or confidence outside (0, 1)
    """
    if n < 1:
        raise DomainError("cp_upper needs at least one trial; an empty activation set is infeasible")
    _check_counts(k, n)
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    if k == n:
        return 1.0

    delta = 1.0 - confidence
    root = bisect(lambda p: binom_cdf(k, n, p) - delta, 0.0, 1.0, xtol=BISECT_XTOL)
    return float(min(1.0, max(root, k / n)))


def cp_upper_zero_failures(n: int, confidence: float) -> float:
    """Closed form for k = 0: 1 - delta ** (1/n)"""
    if n < 1:
        raise DomainError("n must be >= 1")
    return 1.0 - (1.0 - confidence) ** (1.0 / n)


def min_activations_for_feasibility(alpha: float, delta: float) -> int:
    """
    Smallest n for which n zero-loss activations can certify risk <= alpha

    With alpha=0.10 and delta=0.05 this is 29.
    """
    if not 0.0 < alpha < 1.0 or not 0.0 < delta < 1.0:
        raise DomainError(f"alpha and delta must lie in (0, 1), got {alpha}, {delta}")
    return int(math.ceil(math.log(delta) / math.log1p(-alpha)))
