"""Submodular image selection, baselines and region ranking"""
from .submodular_selector import (
    SimilarityBundle,
    SisWeights,
    EvidenceSelection,
    rescale,
    similarity_bundle,
    sis_objective,
    greedy_select,
    naive_greedy_select,
    brute_force_select,
    topk_relevance_select,
    all_images_select,
    get_selector,
    SELECTORS,
    BRUTE_FORCE_MAX_IMAGES,
)
from .region_ranking import top_k_regions

__all__ = [
    'SimilarityBundle',
    'SisWeights',
    'EvidenceSelection',
    'rescale',
    'similarity_bundle',
    'sis_objective',
    'greedy_select',
    'naive_greedy_select',
    'brute_force_select',
    'topk_relevance_select',
    'all_images_select',
    'get_selector',
    'SELECTORS',
    'BRUTE_FORCE_MAX_IMAGES',
    'top_k_regions',
]
