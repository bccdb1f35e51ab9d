"""
Strict entity F1 and micro relation F1
"""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

from errors import ContractError


@dataclass(frozen=True)
class PRF:
    """Mergeable micro counts"""
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @property
    def precision(self) -> float:
        if self.n_pred == 0:
            return 1.0 if self.n_gold == 0 else 0.0
        return self.tp / self.n_pred

    @property
    def recall(self) -> float:
        if self.n_gold == 0:
            return 1.0 if self.n_pred == 0 else 0.0
        return self.tp / self.n_gold

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        if p + r == 0:
            return 0.0
        return 2 * p * r / (p + r)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)

    def __add__(self, other: 'PRF') -> 'PRF':
        return PRF(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gold + other.n_gold)

    def to_dict(self) -> dict:
        return {'tp': self.tp, 'n_pred': self.n_pred, 'n_gold': self.n_gold,
                'precision': self.precision, 'recall': self.recall, 'f1': self.f1}


def _entity_set(entities) -> set:
    if hasattr(entities, 'entities'):
        entities = entities.entities
    return {(int(a), int(b), int(y)) for a, b, y in entities}


def entity_counts(pred, gold) -> PRF:
    """Exact (a, b, type) matches"""
    p, g = _entity_set(pred), _entity_set(gold)
    return PRF(tp=len(p & g), n_pred=len(p), n_gold=len(g))


def entity_f1(pred, gold) -> Tuple[float, float, float]:
    """
    Strict entity-level (P, R, F1)

    Args:
        pred: EntityPrediction or iterable of (a, b, type)
        gold: Same

    Returns:
        (precision, recall, f1); (1, 1, 1) when both are empty
    """
    return entity_counts(pred, gold).as_tuple()


def corpus_entity_counts(pairs: Iterable) -> PRF:
    """Micro counts summed over (pred, gold) pairs of a corpus"""
    total = PRF()
    for pred, gold in pairs:
        total = total + entity_counts(pred, gold)
    return total


def relation_counts(preds: Sequence[int], golds: Sequence[int], null_relation: Optional[int] = 0) -> PRF:
    if len(preds) != len(golds):
        raise ContractError(f"preds and golds differ in length: {len(preds)} vs {len(golds)}")
    n_pred = sum(1 for p in preds if p != null_relation)
    n_gold = sum(1 for g in golds if g != null_relation)
    tp = sum(1 for p, g in zip(preds, golds) if p == g and g != null_relation)
    return PRF(tp=tp, n_pred=n_pred, n_gold=n_gold)


def relation_micro_f1(preds: Sequence[int], golds: Sequence[int],
                      null_relation: Optional[int] = 0) -> Tuple[float, float, float]:
    """Micro (P, R, F1) over non-null relations; null_relation=None counts every label"""
    return relation_counts(preds, golds, null_relation).as_tuple()
