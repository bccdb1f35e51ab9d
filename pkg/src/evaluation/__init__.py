"""Selective metrics, task metrics and the cost model"""
from .selective_metrics import (
    RiskCoverageCurve,
    risk_coverage,
    aurc,
    act_cov_at,
    merge_shards,
    selective_summary,
    write_curve,
)
from .task_metrics import (
    PRF,
    entity_counts,
    entity_f1,
    corpus_entity_counts,
    relation_counts,
    relation_micro_f1,
)
from .cost_model import CostConfig, CostMeter, estimate_cost, always_on_cost, cost_sweep

__all__ = [
    'RiskCoverageCurve',
    'risk_coverage',
    'aurc',
    'act_cov_at',
    'merge_shards',
    'selective_summary',
    'write_curve',
    'PRF',
    'entity_counts',
    'entity_f1',
    'corpus_entity_counts',
    'relation_counts',
    'relation_micro_f1',
    'CostConfig',
    'CostMeter',
    'estimate_cost',
    'always_on_cost',
    'cost_sweep',
]
