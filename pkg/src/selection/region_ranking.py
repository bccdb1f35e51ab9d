"""Top-k region ranking inside one selected image"""
from typing import List

import numpy as np

from storage.embedding_io import EmbeddingMatrix
from storage.vector_math import cosine_matrix


def top_k_regions(q, regions, k: int) -> List[int]:
    """
    Indices of the k regions most similar to q

    Args:
        q: Unit query vector
        regions: EmbeddingMatrix or (M, d) array of region vectors
        k: Number of regions; clipped to M

    Returns:
        Region indices by descending cosine, ties by lower index
    """
    data = regions.data if isinstance(regions, EmbeddingMatrix) else np.asarray(regions)
    if k <= 0 or data.shape[0] == 0:
        return []
    sims, _ = cosine_matrix(q, data)
    order = np.lexsort((np.arange(sims.shape[0]), -sims))
    return [int(i) for i in order[:k]]
