"""Energy tables, span decoding and relation prediction"""
from .energy_decoder import (
    ScoringHeads,
    EnergyTable,
    RelationEnergies,
    CandidateSpan,
    EntityPrediction,
    unit_energy_terms,
    relation_energy_terms,
    ner_decode,
    re_predict,
    total_energy,
    enumerate_spans,
    decision_confidence,
    DEFAULT_MAX_SPAN_LENGTH,
)

__all__ = [
    'ScoringHeads',
    'EnergyTable',
    'RelationEnergies',
    'CandidateSpan',
    'EntityPrediction',
    'unit_energy_terms',
    'relation_energy_terms',
    'ner_decode',
    're_predict',
    'total_energy',
    'enumerate_spans',
    'decision_confidence',
    'DEFAULT_MAX_SPAN_LENGTH',
]
