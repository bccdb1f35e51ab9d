import math

import numpy as np
import pytest

from errors import ContractError, ExhaustiveGuardError
from selection.region_ranking import top_k_regions
from selection.submodular_selector import (
    SimilarityBundle,
    SisWeights,
    all_images_select,
    brute_force_select,
    get_selector,
    greedy_select,
    naive_greedy_select,
    rescale,
    similarity_bundle,
    sis_objective,
    topk_relevance_select,
)
from storage.embedding_io import EmbeddingMatrix

from conftest import random_bundle

W = SisWeights(1.0, 1.0)


def test_rescale_endpoints():
    b = rescale([-1.0, 1.0, 0.0], [[1.0, 0.9, 0.0], [0.9, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert b.r_tilde.tolist() == [0.0, 1.0, 0.5]
    assert b.d_tilde[0, 1] == pytest.approx(0.95)
    assert np.all(np.diag(b.d_tilde) == 1.0)


def test_rescale_rejects_asymmetric_and_out_of_range():
    with pytest.raises(ContractError):
        rescale([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(ContractError):
        rescale([1.5, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ContractError):
        rescale([0.0, 0.0], [[0.9, 0.0], [0.0, 1.0]])


def test_weights_contract():
    with pytest.raises(ContractError):
        SisWeights(0.0, 0.0)
    with pytest.raises(ContractError):
        SisWeights(-1.0, 1.0)


def test_objective_worked_instance(worked_instance):
    assert sis_objective([], worked_instance, W) == 0.0
    assert sis_objective([0, 1], worked_instance, W) == pytest.approx(3.46, abs=1e-12)
    assert sis_objective([0, 2], worked_instance, W) == pytest.approx(2.96, abs=1e-12)


def test_objective_index_out_of_range(worked_instance):
    with pytest.raises(ContractError):
        sis_objective([3], worked_instance, W)


def test_greedy_worked_instance(worked_instance):
    sel = greedy_select(worked_instance, W, 2)
    assert sel.chosen == [0, 1]
    assert sel.gains == pytest.approx([2.62, 0.84], abs=1e-12)
    assert sel.objective == pytest.approx(3.46, abs=1e-12)
    assert brute_force_select(worked_instance, W, 2).chosen == [0, 1]


def test_greedy_modular_case(rng):
    b = random_bundle(rng, 6)
    sel = greedy_select(b, SisWeights(1.0, 0.0), 10)
    assert sel.chosen == np.argsort(-b.r_tilde, kind='stable').tolist()
    assert sel.gains == pytest.approx(sorted(b.r_tilde.tolist(), reverse=True))


def test_single_image():
    b = SimilarityBundle(np.array([0.4]), np.array([[1.0]]))
    for K in (1, 3):
        assert greedy_select(b, W, K).chosen == [0]


def test_no_images_gives_empty_selection():
    b = similarity_bundle(np.ones(3), np.zeros((0, 3)))
    sel = greedy_select(b, W, 2)
    assert sel.is_empty and sel.objective == 0.0


def test_budget_contract(worked_instance):
    with pytest.raises(ContractError):
        greedy_select(worked_instance, W, 0)


def test_brute_force_full_set(rng):
    b = random_bundle(rng, 5)
    assert brute_force_select(b, W, 5).chosen == [0, 1, 2, 3, 4]


def test_brute_force_tie_picks_smaller_index():
    b = SimilarityBundle(np.array([0.5, 0.5, 0.5]),
                         np.array([[1.0, 1.0, 0.2], [1.0, 1.0, 0.2], [0.2, 0.2, 1.0]]))
    sel = brute_force_select(b, SisWeights(0.0, 1.0), 1)
    assert sel.chosen == [0]


def test_brute_force_guard(rng):
    with pytest.raises(ExhaustiveGuardError):
        brute_force_select(random_bundle(rng, 21), W, 2)


def test_objective_monotone_and_submodular(rng):
    for _ in range(200):
        n = int(rng.integers(2, 8))
        b = random_bundle(rng, n)
        w = SisWeights(float(rng.random()), float(rng.random()) + 0.01)
        B = [int(i) for i in np.flatnonzero(rng.random(n) < 0.5)]
        A = [i for i in B if rng.random() < 0.5]
        outside = [i for i in range(n) if i not in B]
        for i in outside:
            gain_A = sis_objective(A + [i], b, w) - sis_objective(A, b, w)
            gain_B = sis_objective(B + [i], b, w) - sis_objective(B, b, w)
            assert gain_A >= -1e-12
            assert gain_A >= gain_B - 1e-12


def test_greedy_guarantee_and_cached_equals_naive(rng):
    bound = 1.0 - 1.0 / math.e
    exact = 0
    instances = 1000
    for _ in range(instances):
        n = int(rng.integers(1, 9))
        K = int(rng.integers(1, 5))
        b = random_bundle(rng, n)
        w = SisWeights(float(rng.random()), float(rng.random()))
        greedy = greedy_select(b, w, K)
        optimum = brute_force_select(b, w, K)
        assert greedy.objective >= bound * optimum.objective - 1e-12
        assert greedy.chosen == naive_greedy_select(b, w, K).chosen
        assert all(g1 >= g2 - 1e-12 for g1, g2 in zip(greedy.gains, greedy.gains[1:]))
        assert len(set(greedy.chosen)) == len(greedy.chosen) <= K
        exact += int(abs(greedy.objective - optimum.objective) < 1e-12)
    assert exact > instances // 2


def test_baselines(worked_instance):
    assert topk_relevance_select(worked_instance, W, 2).chosen == [0, 1]
    everything = all_images_select(worked_instance, W, 2)
    assert everything.chosen == [0, 1, 2]
    assert everything.objective == pytest.approx(sis_objective([0, 1, 2], worked_instance, W))
    assert get_selector('sis') is greedy_select
    with pytest.raises(ContractError):
        get_selector('dpp')


def test_top_k_regions():
    q = np.array([1.0, 0.0])
    assert top_k_regions(q, EmbeddingMatrix(np.array([[1.0, 0.0], [-1.0, 0.0]])), 1) == [0]

    sims = [0.1, 0.8, 0.5]
    regions = np.array([[s, math.sqrt(1 - s * s)] for s in sims])
    assert top_k_regions(q, regions, 2) == [1, 2]
    assert top_k_regions(q, regions, 10) == [1, 2, 0]


def test_top_k_regions_ties_by_index():
    regions = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert top_k_regions(np.array([1.0, 0.0]), regions, 2) == [0, 2]
