"""
Groundability Gate
Scores how likely a text unit is to benefit from visual evidence,
using only global image vectors (regions are never touched here).
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from errors import ContractError
from storage.vector_math import cosine

logger = logging.getLogger(__name__)

N_GATE_FEATURES = 4
NEVER_ACTIVATE = math.inf
GATE_FORMAT = 'saver-gate'
GATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GateFeatures:
    """Similarity statistics between a unit query and the global image vectors"""
    psi_max: float
    mean: float
    std: float
    top2_mean: float
    no_image: bool = False

    def as_vector(self) -> np.ndarray:
        return np.array([self.psi_max, self.mean, self.std, self.top2_mean], dtype=np.float64)

    @classmethod
    def empty(cls) -> 'GateFeatures':
        return cls(0.0, 0.0, 0.0, 0.0, no_image=True)


@dataclass(frozen=True, eq=False)
class GateModel:
    """Linear-logistic gate over [h_s ; psi_max ; mean ; std ; top2_mean]"""
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < N_GATE_FEATURES:
            raise ContractError(f"Gate weights need length d + {N_GATE_FEATURES}, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, 'weights', w)
        object.__setattr__(self, 'bias', float(self.bias))

    @property
    def dim(self) -> int:
        """Span representation dim d"""
        return int(self.weights.shape[0]) - N_GATE_FEATURES

    @classmethod
    def zeros(cls, dim: int) -> 'GateModel':
        return cls(np.zeros(dim + N_GATE_FEATURES), 0.0)

    @classmethod
    def feature_only(cls, dim: int, feature_weights: Sequence[float], bias: float = 0.0) -> 'GateModel':
        """Zero weights on h_s, given weights on the four features"""
        w = np.zeros(dim + N_GATE_FEATURES)
        w[dim:] = np.asarray(feature_weights, dtype=np.float64)
        return cls(w, bias)

    def score(self, h_s, feats: GateFeatures) -> float:
        return gate_score(self, h_s, feats)

    def to_dict(self) -> dict:
        return {
            'format': GATE_FORMAT,
            'version': GATE_FORMAT_VERSION,
            'dim': self.dim,
            'weights': [float(x) for x in self.weights],
            'bias': self.bias,
        }

    @classmethod
    def from_dict(cls, record: dict) -> 'GateModel':
        if record.get('format') != GATE_FORMAT or record.get('version') != GATE_FORMAT_VERSION:
            raise ContractError(f"Not a version {GATE_FORMAT_VERSION} gate record")
        model = cls(np.asarray(record['weights'], dtype=np.float64), record['bias'])
        if model.dim != record['dim']:
            raise ContractError(f"Gate record dim {record['dim']} does not match {len(model.weights)} weights")
        return model


@dataclass(frozen=True)
class GateDecision:
    """Gate score, threshold and the resulting hard activation"""
    g: float
    tau: float
    gamma: int

    @classmethod
    def decide(cls, g: float, tau: float) -> 'GateDecision':
        return cls(g=float(g), tau=float(tau), gamma=hard_gate(g, tau))


@dataclass
class GateFitResult:
    """Output of fit_gate"""
    model: GateModel
    loss_history: List[float] = field(default_factory=list)
    warning: Optional[str] = None
    converged: bool = True

    @property
    def degenerate(self) -> bool:
        return self.warning is not None


def _reduce_similarities(sims: np.ndarray) -> GateFeatures:
    # canonical order so the reductions do not depend on image order
    s = np.sort(sims)[::-1]
    mean = float(np.mean(s))
    return GateFeatures(
        psi_max=float(s[0]),
        mean=mean,
        std=float(np.sqrt(np.mean((s - mean) ** 2))),
        top2_mean=float(np.mean(s[:min(2, s.shape[0])])),
        no_image=False,
    )


def groundability_features(q, globals_) -> GateFeatures:
    """
    Compute gate features from cosine similarities to global image vectors

    Args:
        q: Unit query vector
        globals_: Global image vectors (list of vectors or (N, d) array)

    Returns:
        GateFeatures; all zeros with no_image=True when there are no images
    """
    if len(globals_) == 0:
        return GateFeatures.empty()
    sims = np.array([cosine(q, v) for v in globals_], dtype=np.float64)
    return _reduce_similarities(sims)


def groundability_features_batch(queries, globals_, mask=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized features over padded image sets

    Args:
        queries: (B, d) query vectors
        globals_: (B, N, d) global vectors, padded
        mask: (B, N) booleans, True for real images (default: all real)

    Returns:
        (features, no_image): (B, 4) array in as_vector() order and (B,) flags
    """
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(globals_, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 3 or g.shape[0] != q.shape[0] or g.shape[2] != q.shape[1]:
        raise ContractError(f"Shape mismatch: queries {q.shape}, globals {g.shape}")
    B, N, _ = g.shape
    mask = np.ones((B, N), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    q_norm = np.linalg.norm(q, axis=1)
    g_norm = np.linalg.norm(g, axis=2)
    denom = q_norm[:, None] * g_norm
    dots = np.einsum('bnd,bd->bn', g, q)
    sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    sims = np.clip(sims, -1.0, 1.0)

    counts = mask.sum(axis=1)
    no_image = counts == 0
    safe_counts = np.maximum(counts, 1)

    ranked = np.sort(np.where(mask, sims, -np.inf), axis=1)[:, ::-1]
    valid = np.isfinite(ranked)
    ranked_zeroed = np.where(valid, ranked, 0.0)

    psi_max = np.where(no_image, 0.0, ranked_zeroed[:, 0])
    mean = ranked_zeroed.sum(axis=1) / safe_counts
    var = (np.where(valid, (ranked_zeroed - mean[:, None]) ** 2, 0.0)).sum(axis=1) / safe_counts
    top_n = np.minimum(counts, 2)
    top2 = ranked_zeroed[:, :2].sum(axis=1) / np.maximum(top_n, 1)

    feats = np.stack([psi_max, mean, np.sqrt(var), top2], axis=1)
    feats[no_image] = 0.0
    return feats, no_image


def gate_score(model: GateModel, h_s, feats: GateFeatures) -> float:
    """
    Logistic gate score g(s) in (0, 1)

    In float64 the sigmoid saturates: a logit above about 37 gives exactly
    1.0 and one below about -745 gives 0.0, so scores in those tails tie and
    the score is only non-decreasing there. The range is [0, 1] in practice.

    Raises:
        ContractError: if len(h_s) + 4 does not match the model weights
    """
    h = np.asarray(h_s, dtype=np.float64)
    x = np.concatenate([h, feats.as_vector()])
    if x.shape[0] != model.weights.shape[0]:
        raise ContractError(
            f"Gate expects span representation of dim {model.dim}, got {h.shape[0]}"
        )
    return float(expit(float(np.dot(model.weights, x)) + model.bias))


def gate_scores_batch(model: GateModel, H, features) -> np.ndarray:
    """
    Vectorized gate_score over rows

    Args:
        model: Gate weights
        H: (B, d) span representations
        features: (B, 4) features from groundability_features_batch

    Returns:
        (B,) gate scores
    """
    X = np.hstack([np.asarray(H, dtype=np.float64), np.asarray(features, dtype=np.float64)])
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ContractError(f"Gate expects rows of length {model.weights.shape[0]}, got shape {X.shape}")
    return expit(X @ model.weights + model.bias)


def pair_gate(g_head: float, g_tail: float) -> float:
    """Pair gate: active whenever either endpoint looks groundable"""
    for g in (g_head, g_tail):
        if not 0.0 <= g <= 1.0:
            raise ContractError(f"Gate scores must lie in [0, 1], got {g}")
    return max(g_head, g_tail)


def hard_gate(g: float, tau: float) -> int:
    """1 iff g >= tau"""
    return int(g >= tau)


# ---------------------------------------------------------------------------
# Standalone logistic fit
# ---------------------------------------------------------------------------

def _design_matrix(examples) -> Tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    for h_s, feats, label in examples:
        rows.append(np.concatenate([np.asarray(h_s, dtype=np.float64), feats.as_vector()]))
        if label not in (0, 1):
            raise ContractError(f"Gate labels must be 0 or 1, got {label!r}")
        labels.append(float(label))
    widths = {r.shape[0] for r in rows}
    if len(widths) != 1:
        raise ContractError(f"Inconsistent span representation dims {sorted(widths)}")
    return np.vstack(rows), np.asarray(labels)


def fit_gate(examples, l2: float = 1e-3, steps: int = 200, seed: int = 0) -> GateFitResult:
    """
    Fit a GateModel by L2-regularized logistic regression

    Args:
        examples: List of (h_s, GateFeatures, label in {0, 1})
        l2: Ridge strength on the weights (bias is unregularized)
        steps: Maximum L-BFGS iterations
        seed: Seed for the initial weights

    Returns:
        GateFitResult; when only one class is present the model has zero
        weights, a constant score and a warning
    """
    if len(examples) == 0:
        raise ContractError("fit_gate needs at least one example")
    if l2 < 0:
        raise ContractError(f"l2 must be >= 0, got {l2}")

    X, y = _design_matrix(examples)
    n, width = X.shape
    positives = int(y.sum())

    if positives in (0, n):
        # smoothed base rate keeps the logit finite
        rate = (positives + 0.5) / (n + 1.0)
        bias = math.log(rate / (1.0 - rate))
        warning = f"all {n} gate labels are {int(y[0])}; fitted a constant-score model"
        logger.warning(warning)
        return GateFitResult(GateModel(np.zeros(width), bias), [], warning)

    def objective(params):
        w, b = params[:-1], params[-1]
        z = X @ w + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
        residual = expit(z) - y
        grad = np.empty_like(params)
        grad[:-1] = X.T @ residual / n + l2 * w
        grad[-1] = residual.mean()
        return loss, grad

    rng = np.random.default_rng(seed)
    x0 = np.concatenate([rng.normal(0.0, 0.01, size=width), [0.0]])

    history = [objective(x0)[0]]

    def record(xk):
        history.append(objective(xk)[0])

    result = minimize(objective, x0, jac=True, method='L-BFGS-B',
                      callback=record, options={'maxiter': int(steps)})
    if not result.success:
        logger.info("Gate fit stopped before convergence: %s", result.message)

    model = GateModel(result.x[:-1], float(result.x[-1]))
    logger.debug("Gate fit: %d examples, final loss %.6f", n, history[-1])
    return GateFitResult(model=model, loss_history=history, converged=bool(result.success))


def save_gate_model(model: GateModel, path: Union[str, Path]) -> None:
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2)


def load_gate_model(path: Union[str, Path]) -> GateModel:
    with open(path, 'r') as f:
        return GateModel.from_dict(json.load(f))
