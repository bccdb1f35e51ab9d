"""Synthetic worlds with known ground truth and the Monte Carlo calibration check"""
from .world_generator import (
    WorldConfig,
    UnitTruth,
    MonteCarloReport,
    generate_world,
    synthetic_gate_scores,
    synthetic_bundle,
    write_truth,
    load_truth,
    write_world,
    monte_carlo_calibration_check,
)

__all__ = [
    'WorldConfig',
    'UnitTruth',
    'MonteCarloReport',
    'generate_world',
    'synthetic_gate_scores',
    'synthetic_bundle',
    'write_truth',
    'load_truth',
    'write_world',
    'monte_carlo_calibration_check',
]
