"""Clopper-Pearson bounds and split-calibrated gate thresholds"""
from .clopper_pearson import (
    binom_cdf,
    cp_upper,
    cp_upper_zero_failures,
    min_activations_for_feasibility,
)
from .threshold_calibrator import (
    CalibrationInput,
    CalibrationResult,
    calibrate_threshold,
    threshold_sweep,
    calibration_split,
    load_calibration,
    read_score_file,
    write_score_file,
    DEFAULT_CALIBRATION_FRACTION,
)

__all__ = [
    'binom_cdf',
    'cp_upper',
    'cp_upper_zero_failures',
    'min_activations_for_feasibility',
    'CalibrationInput',
    'CalibrationResult',
    'calibrate_threshold',
    'threshold_sweep',
    'calibration_split',
    'load_calibration',
    'read_score_file',
    'write_score_file',
    'DEFAULT_CALIBRATION_FRACTION',
]
