"""Groundability gate: features, scores, hard gating and a standalone fit"""
from .groundability_gate import (
    GateFeatures,
    GateModel,
    GateDecision,
    GateFitResult,
    groundability_features,
    groundability_features_batch,
    gate_score,
    gate_scores_batch,
    pair_gate,
    hard_gate,
    fit_gate,
    save_gate_model,
    load_gate_model,
    NEVER_ACTIVATE,
    N_GATE_FEATURES,
)

__all__ = [
    'GateFeatures',
    'GateModel',
    'GateDecision',
    'GateFitResult',
    'groundability_features',
    'groundability_features_batch',
    'gate_score',
    'gate_scores_batch',
    'pair_gate',
    'hard_gate',
    'fit_gate',
    'save_gate_model',
    'load_gate_model',
    'NEVER_ACTIVATE',
    'N_GATE_FEATURES',
]
