import math

import numpy as np
import pytest

from calibration.clopper_pearson import (
    binom_cdf,
    cp_upper,
    cp_upper_zero_failures,
    min_activations_for_feasibility,
)
from calibration.threshold_calibrator import (
    CalibrationInput,
    CalibrationResult,
    calibrate_threshold,
    calibration_split,
    load_calibration,
    read_score_file,
    threshold_sweep,
    write_score_file,
)
from config import RunManifest, write_artifact
from errors import ContractError, DomainError


# ---------------------------------------------------------------------------
# Binomial tail and the Clopper-Pearson bound
# ---------------------------------------------------------------------------

def test_binom_cdf_examples():
    assert binom_cdf(4, 4, 0.3) == 1.0
    assert binom_cdf(0, 10, 0.1) == pytest.approx(0.9 ** 10, abs=1e-12)
    assert binom_cdf(1, 2, 0.5) == pytest.approx(0.75, abs=1e-12)


def test_binom_cdf_domain():
    with pytest.raises(DomainError):
        binom_cdf(3, 2, 0.5)
    with pytest.raises(DomainError):
        binom_cdf(0, 2, 1.5)


def test_cp_upper_examples():
    assert cp_upper(7, 7, 0.95) == 1.0
    assert cp_upper(0, 59, 0.95) == pytest.approx(1 - 0.05 ** (1 / 59), abs=1e-9)
    assert cp_upper(0, 59, 0.95) == pytest.approx(0.0495, abs=1e-4)
    p = cp_upper(1, 10, 0.95)
    assert p == pytest.approx(0.3942, abs=1e-4)
    # k = 1 closed form
    assert 1 - (1 - p) ** 10 - 10 * p * (1 - p) ** 9 == pytest.approx(0.95, abs=1e-9)


def test_cp_upper_needs_a_trial():
    with pytest.raises(DomainError):
        cp_upper(0, 0, 0.95)


def test_cp_upper_matches_zero_failure_closed_form():
    for n in range(1, 201):
        assert cp_upper(0, n, 0.95) == pytest.approx(1 - 0.05 ** (1 / n), abs=1e-9)
        assert cp_upper_zero_failures(n, 0.95) == pytest.approx(1 - 0.05 ** (1 / n), abs=1e-15)


def test_cp_upper_inverts_the_tail_on_a_grid():
    delta = 0.05
    for n in range(1, 51):
        for k in range(0, n):
            p = cp_upper(k, n, 1 - delta)
            assert binom_cdf(k, n, p) == pytest.approx(delta, abs=1e-8)
            assert p >= k / n


def test_cp_upper_monotone():
    for n in range(1, 51):
        bounds = [cp_upper(k, n, 0.95) for k in range(n + 1)]
        assert all(a <= b for a, b in zip(bounds, bounds[1:]))
    for k in range(0, 20):
        bounds = [cp_upper(k, n, 0.95) for n in range(max(k, 1), 51)]
        assert all(a >= b for a, b in zip(bounds, bounds[1:]))


def test_min_activations_for_feasibility():
    assert min_activations_for_feasibility(0.10, 0.05) == 29
    assert cp_upper(0, 29, 0.95) <= 0.10 < cp_upper(0, 28, 0.95)


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

def test_calibration_worked_example():
    data = CalibrationInput([0.9, 0.85, 0.8, 0.75, 0.7, 0.5], [0, 0, 0, 0, 0, 1], alpha=0.5, delta=0.05)
    result = calibrate_threshold(data)
    assert result.feasible
    assert result.tau == 0.7
    assert (result.n, result.k) == (5, 0)
    assert result.cp_upper == pytest.approx(1 - 0.05 ** (1 / 5), abs=1e-9)
    assert result.coverage == pytest.approx(5 / 6)
    assert cp_upper(1, 6, 0.95) == pytest.approx(0.582, abs=1e-3)


def test_all_losses_infeasible():
    result = calibrate_threshold(CalibrationInput([0.1 * i for i in range(50)], [1] * 50, alpha=0.9))
    assert not result.feasible
    assert result.tau == math.inf
    assert result.coverage == 0.0


def test_single_activation_cannot_certify_ten_percent():
    result = calibrate_threshold(CalibrationInput([0.9], [0], alpha=0.10, delta=0.05))
    assert not result.feasible
    assert cp_upper(0, 1, 0.95) == pytest.approx(0.95)


def test_empty_calibration_set_is_infeasible():
    result = calibrate_threshold(CalibrationInput([], []))
    assert not result.feasible and result.n_calibration == 0


def test_alpha_one_activates_everything():
    result = calibrate_threshold(CalibrationInput([0.2, 0.9, 0.4], [1, 1, 0], alpha=1.0))
    assert result.feasible
    assert result.tau == 0.2 and result.coverage == 1.0


def test_ties_form_one_candidate():
    # the two 0.5 units are activated together
    result = calibrate_threshold(CalibrationInput([0.9] * 40 + [0.5, 0.5], [0] * 40 + [0, 1], alpha=0.10))
    assert result.feasible
    assert result.tau == 0.9 and result.n == 40


def test_result_matches_exhaustive_scan(rng):
    for _ in range(30):
        n = int(rng.integers(30, 120))
        scores = np.round(rng.random(n), 2)
        losses = (rng.random(n) < 0.6 * (1 - scores)).astype(int)
        data = CalibrationInput(scores, losses, alpha=0.2, delta=0.1)
        sweep = threshold_sweep(data)
        feasible = sweep[sweep['feasible']]
        result = calibrate_threshold(data)
        if feasible.empty:
            assert not result.feasible
        else:
            assert result.tau == feasible['tau'].min()
            assert result.coverage == feasible['coverage'].max()


def test_calibration_input_contract():
    with pytest.raises(ContractError):
        CalibrationInput([0.1, 0.2], [0])
    with pytest.raises(ContractError):
        CalibrationInput([0.1], [2])
    with pytest.raises(ContractError):
        CalibrationInput([0.1], [0], alpha=0.0)
    with pytest.raises(ContractError):
        CalibrationInput([float('nan')], [0])


def test_result_json_round_trip(tmp_path):
    infeasible = CalibrationResult.infeasible(0.1, 0.05, 12)
    path = tmp_path / 'cal.json'
    write_artifact(path, RunManifest('calibrate', None), {'calibration': infeasible.to_dict()})
    assert load_calibration(path) == infeasible
    assert CalibrationResult.from_dict(infeasible.to_dict()).tau == math.inf
    assert infeasible.to_dict()['tau'] is None


def test_calibration_split_is_seeded():
    cal, rest = calibration_split(100, 0.10, seed=3)
    cal2, rest2 = calibration_split(100, 0.10, seed=3)
    assert len(cal) == 10 and len(rest) == 90
    assert np.array_equal(cal, cal2) and np.array_equal(rest, rest2)
    assert sorted(np.concatenate([cal, rest]).tolist()) == list(range(100))


def test_score_file(tmp_path):
    path = tmp_path / 'scores.csv'
    write_score_file([0.25, 1 / 3], [0, 1], path)
    scores, losses = read_score_file(path)
    assert scores == [0.25, 1 / 3]
    assert losses == [0, 1]
