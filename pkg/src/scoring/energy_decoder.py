"""
Energy-based scoring and decoding for entity spans and relations

Energies are negative logits of linear heads. A unit that received
visual evidence adds lambda_cons * eta * (-consis) + lambda_gate * eta.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from errors import ContractError

logger = logging.getLogger(__name__)

DEFAULT_MAX_SPAN_LENGTH = 10
SCORING_FORMAT = 'saver-scoring-heads'
SCORING_FORMAT_VERSION = 1

Span = Tuple[int, int]
Entity = Tuple[int, int, int]


def _linear(shape_in: int, shape_out: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    return rng.normal(0.0, 1.0 / math.sqrt(shape_in), size=(shape_in, shape_out)), np.zeros(shape_out)


@dataclass(eq=False)
class ScoringHeads:
    """
    Linear span, type and relation heads plus the fusion penalty weights

    Args:
        span_weights, span_bias: (d, 2), (2,) over delta in {0, 1}
        type_weights, type_bias: (d, T), (T,)
        rel_weights, rel_bias: (d_pair, R), (R,)
        lambda_cons: Weight of the consistency reward
        lambda_gate: Weight of the activation penalty
        null_relation: Relation id meaning "no relation", excluded from micro F1
    """
    span_weights: np.ndarray
    span_bias: np.ndarray
    type_weights: np.ndarray
    type_bias: np.ndarray
    rel_weights: np.ndarray
    rel_bias: np.ndarray
    lambda_cons: float = 1.0
    lambda_gate: float = 0.0
    null_relation: Optional[int] = 0
    type_names: List[str] = field(default_factory=list)
    relation_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ('span_weights', 'span_bias', 'type_weights', 'type_bias', 'rel_weights', 'rel_bias'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.span_weights.shape[1:] != (2,) or self.span_bias.shape != (2,):
            raise ContractError("span head must score exactly two decisions")
        if self.type_weights.shape[1] < 1 or self.rel_weights.shape[1] < 1:
            raise ContractError("type and relation inventories must be non-empty")
        if self.type_weights.shape[0] != self.span_weights.shape[0]:
            raise ContractError("span and type heads must share the input dim")
        if self.type_bias.shape != (self.n_types,) or self.rel_bias.shape != (self.n_relations,):
            raise ContractError("head bias shapes do not match their weights")
        if not (math.isfinite(self.lambda_cons) and math.isfinite(self.lambda_gate)):
            raise ContractError("lambdas must be finite")
        if self.lambda_cons < 0 or self.lambda_gate < 0:
            raise ContractError("lambdas must be non-negative")

    @property
    def dim(self) -> int:
        return int(self.span_weights.shape[0])

    @property
    def pair_dim(self) -> int:
        return int(self.rel_weights.shape[0])

    @property
    def n_types(self) -> int:
        return int(self.type_weights.shape[1])

    @property
    def n_relations(self) -> int:
        return int(self.rel_weights.shape[1])

    @classmethod
    def seeded(cls, dim: int, pair_dim: int, n_types: int, n_relations: int, seed: int = 0,
               **kwargs) -> 'ScoringHeads':
        rng = np.random.default_rng(seed)
        span_w, span_b = _linear(dim, 2, rng)
        type_w, type_b = _linear(dim, n_types, rng)
        rel_w, rel_b = _linear(pair_dim, n_relations, rng)
        return cls(span_w, span_b, type_w, type_b, rel_w, rel_b, **kwargs)

    @classmethod
    def zeros(cls, dim: int, pair_dim: int, n_types: int, n_relations: int, **kwargs) -> 'ScoringHeads':
        return cls(np.zeros((dim, 2)), np.zeros(2), np.zeros((dim, n_types)), np.zeros(n_types),
                   np.zeros((pair_dim, n_relations)), np.zeros(n_relations), **kwargs)

    def with_lambdas(self, lambda_cons: float, lambda_gate: float) -> 'ScoringHeads':
        return ScoringHeads(self.span_weights, self.span_bias, self.type_weights, self.type_bias,
                            self.rel_weights, self.rel_bias, lambda_cons, lambda_gate,
                            self.null_relation, list(self.type_names), list(self.relation_names))

    def span_energies(self, h_tilde) -> np.ndarray:
        return -(np.asarray(h_tilde, dtype=np.float64) @ self.span_weights + self.span_bias)

    def type_energies(self, h_tilde) -> np.ndarray:
        return -(np.asarray(h_tilde, dtype=np.float64) @ self.type_weights + self.type_bias)

    def rel_energies(self, u_tilde) -> np.ndarray:
        u = np.asarray(u_tilde, dtype=np.float64)
        if u.shape[-1] != self.pair_dim:
            raise ContractError(f"Relation head expects dim {self.pair_dim}, got {u.shape[-1]}")
        return -(u @ self.rel_weights + self.rel_bias)

    def fusion_term(self, eta: float, consis: float) -> float:
        """lambda_cons * eta * f_cons(consis) + lambda_gate * eta, f_cons(x) = -x"""
        return self.lambda_cons * eta * (-consis) + self.lambda_gate * eta

    def to_dict(self) -> dict:
        return {
            'format': SCORING_FORMAT,
            'version': SCORING_FORMAT_VERSION,
            'span_weights': self.span_weights.tolist(),
            'span_bias': self.span_bias.tolist(),
            'type_weights': self.type_weights.tolist(),
            'type_bias': self.type_bias.tolist(),
            'rel_weights': self.rel_weights.tolist(),
            'rel_bias': self.rel_bias.tolist(),
            'lambda_cons': self.lambda_cons,
            'lambda_gate': self.lambda_gate,
            'null_relation': self.null_relation,
            'type_names': list(self.type_names),
            'relation_names': list(self.relation_names),
        }

    @classmethod
    def from_dict(cls, record: dict) -> 'ScoringHeads':
        if record.get('format') != SCORING_FORMAT or record.get('version') != SCORING_FORMAT_VERSION:
            raise ContractError(f"Not a version {SCORING_FORMAT_VERSION} scoring-heads record")
        fields = {k: v for k, v in record.items() if k not in ('format', 'version')}
        return cls(**fields)


@dataclass(frozen=True, eq=False)
class EnergyTable:
    """Per-decision energies of one span unit"""
    span: np.ndarray
    type: np.ndarray
    extra: float = 0.0

    @property
    def best_type(self) -> int:
        return int(np.argmin(self.type))

    @property
    def admissible(self) -> bool:
        # extra is paid whatever delta is, so it cancels here
        return bool(self.span[1] + self.type[self.best_type] < self.span[0])

    def typed_energy(self, y: int) -> float:
        return float(self.span[1] + self.type[y] + self.extra)

    def decision_energies(self) -> np.ndarray:
        """[delta=0, (delta=1, y=0), ..., (delta=1, y=T-1)]"""
        return np.concatenate([[self.span[0]], self.span[1] + self.type])


@dataclass(frozen=True, eq=False)
class RelationEnergies:
    rel: np.ndarray
    extra: float = 0.0

    def energy(self, r: int) -> float:
        return float(self.rel[r] + self.extra)


def unit_energy_terms(h_tilde, eta: float, consis: float, heads: ScoringHeads) -> EnergyTable:
    """Energy table of a span unit: head scores plus its fusion term"""
    return EnergyTable(
        span=heads.span_energies(h_tilde),
        type=heads.type_energies(h_tilde),
        extra=heads.fusion_term(eta, consis),
    )


def relation_energy_terms(u_tilde, eta: float, consis: float, heads: ScoringHeads) -> RelationEnergies:
    return RelationEnergies(rel=heads.rel_energies(u_tilde), extra=heads.fusion_term(eta, consis))


@dataclass(frozen=True, eq=False)
class CandidateSpan:
    """A candidate span with its fused representation and energies"""
    span: Span
    table: EnergyTable
    h_tilde: Optional[np.ndarray] = None
    eta: float = 0.0
    consis: float = 0.0
    unit_id: Optional[str] = None

    @property
    def length(self) -> int:
        return self.span[1] - self.span[0] + 1


def _overlaps(s: Span, t: Span) -> bool:
    return s[0] <= t[1] and t[0] <= s[1]


@dataclass(frozen=True)
class EntityPrediction:
    """Non-overlapping (a, b, type) triples, sorted"""
    entities: Tuple[Entity, ...] = ()

    def __post_init__(self):
        ents = tuple(sorted((int(a), int(b), int(y)) for a, b, y in self.entities))
        for i in range(len(ents) - 1):
            if _overlaps(ents[i][:2], ents[i + 1][:2]):
                raise ContractError(f"Overlapping entities {ents[i]} and {ents[i + 1]}")
        object.__setattr__(self, 'entities', ents)

    def spans(self) -> List[Span]:
        return [(a, b) for a, b, _ in self.entities]

    def type_of(self, span: Span) -> Optional[int]:
        for a, b, y in self.entities:
            if (a, b) == tuple(span):
                return y
        return None

    def __len__(self) -> int:
        return len(self.entities)

    def to_list(self) -> List[dict]:
        return [{'a': a, 'b': b, 'type': y} for a, b, y in self.entities]


def ner_decode(candidates: Sequence[CandidateSpan], heads: Optional[ScoringHeads] = None,
               max_span_length: int = DEFAULT_MAX_SPAN_LENGTH) -> EntityPrediction:
    """
    Greedy non-overlapping decoding in ascending energy order

    A candidate is admissible when its best typed delta=1 energy is strictly
    below its delta=0 energy. Admissible (span, best type) items are sorted by
    (energy, a, b, type) and accepted unless they overlap an accepted span.

    Raises:
        ContractError: a candidate longer than max_span_length
    """
    items = []
    for c in candidates:
        if c.length > max_span_length:
            raise ContractError(f"Span {c.span} longer than the maximum of {max_span_length}")
        if not c.table.admissible:
            continue
        y = c.table.best_type
        items.append((c.table.typed_energy(y), c.span[0], c.span[1], y))

    items.sort()
    accepted: List[Entity] = []
    for _, a, b, y in items:
        if any(_overlaps((a, b), (a2, b2)) for a2, b2, _ in accepted):
            continue
        accepted.append((a, b, y))
    return EntityPrediction(tuple(accepted))


def re_predict(u_tilde, eta: float, consis: float, heads: ScoringHeads) -> int:
    """
    Lowest-energy relation id

    The fusion term is the same for every relation, so only the relation
    head decides; ties go to the lowest id.
    """
    return int(np.argmin(heads.rel_energies(u_tilde)))


def total_energy(prediction: EntityPrediction, candidates: Sequence[CandidateSpan]) -> float:
    """
    Total entity energy of a prediction over its candidate set

    Every candidate pays its delta energy and its fusion term; predicted
    entities also pay their type energy.
    """
    by_span: Dict[Span, CandidateSpan] = {}
    for c in candidates:
        by_span.setdefault(tuple(c.span), c)
    for a, b, _ in prediction.entities:
        if (a, b) not in by_span:
            raise ContractError(f"Predicted span ({a},{b}) is not a candidate")

    total = 0.0
    for span, c in by_span.items():
        y = prediction.type_of(span)
        if y is None:
            total += float(c.table.span[0])
        else:
            total += float(c.table.span[1] + c.table.type[y])
        total += c.table.extra
    return total


def enumerate_spans(n_tokens: int, max_length: int = DEFAULT_MAX_SPAN_LENGTH) -> List[Span]:
    """All (a, b) with b - a + 1 <= max_length, ordered by a then b"""
    return [(a, b) for a in range(n_tokens) for b in range(a, min(n_tokens, a + max_length))]


def decision_confidence(energies) -> float:
    """Probability of the lowest-energy decision under softmax(-energy)"""
    e = np.asarray(energies, dtype=np.float64)
    return float(np.max(softmax(-e)))
