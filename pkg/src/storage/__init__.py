"""Embedding matrices, datasets and vector math"""
from .embedding_io import (
    EmbeddingMatrix,
    encode_matrix,
    decode_matrix,
    write_matrix,
    read_matrix,
    MAGIC,
    FORMAT_VERSION,
    HEADER_SIZE,
)
from .vector_math import cosine, cosine_checked, cosine_matrix, pairwise_cosine
from .dataset import (
    MatrixRef,
    ImageEntry,
    UnitSpec,
    Sample,
    load_dataset,
    write_dataset,
    parse_record,
    DATASET_VERSION,
)

__all__ = [
    'EmbeddingMatrix',
    'encode_matrix',
    'decode_matrix',
    'write_matrix',
    'read_matrix',
    'MAGIC',
    'FORMAT_VERSION',
    'HEADER_SIZE',
    'cosine',
    'cosine_checked',
    'cosine_matrix',
    'pairwise_cosine',
    'MatrixRef',
    'ImageEntry',
    'UnitSpec',
    'Sample',
    'load_dataset',
    'write_dataset',
    'parse_record',
    'DATASET_VERSION',
]
