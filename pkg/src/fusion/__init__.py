"""Projections, set encoder and gated fusion"""
from .projection import (
    ProjectionHead,
    span_rep,
    distance_features,
    pair_features,
    pair_rep,
    N_DISTANCE_FEATURES,
)
from .set_encoder import (
    SetEncoder,
    MultiheadAttentionBlock,
    set_encode,
    set_encode_with_attention,
    save_set_encoder,
    load_set_encoder,
)
from .gated_fusion import (
    FusionConfig,
    RegionLoader,
    build_evidence_set,
    fuse,
    consistency,
)

__all__ = [
    'ProjectionHead',
    'span_rep',
    'distance_features',
    'pair_features',
    'pair_rep',
    'N_DISTANCE_FEATURES',
    'SetEncoder',
    'MultiheadAttentionBlock',
    'set_encode',
    'set_encode_with_attention',
    'save_set_encoder',
    'load_set_encoder',
    'FusionConfig',
    'RegionLoader',
    'build_evidence_set',
    'fuse',
    'consistency',
]
