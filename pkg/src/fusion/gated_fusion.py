"""
Evidence set construction, gated fusion and consistency scoring
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import ContractError
from selection.region_ranking import top_k_regions
from selection.submodular_selector import EvidenceSelection
from storage.dataset import ImageEntry
from storage.vector_math import cosine
from .projection import ProjectionHead

logger = logging.getLogger(__name__)

FUSION_MODES = ('train_soft', 'test_hard')


@dataclass(frozen=True)
class FusionConfig:
    """train_soft: eta = g; test_hard: eta = g * gamma"""
    mode: str = 'test_hard'

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ContractError(f"Fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")

    def eta(self, g: float, gamma: int) -> float:
        if self.mode == 'train_soft':
            return float(g)
        return float(g) * int(gamma)


class RegionLoader:
    """
    Per-sample region cache

    Region matrices are read on first use only; `reads` counts the
    matrices actually loaded.
    """

    def __init__(self):
        self.reads = 0
        self._cache: Dict[str, Optional[np.ndarray]] = {}

    def load(self, image: ImageEntry) -> Optional[np.ndarray]:
        """Region vectors of an image as float64, or None when it has none"""
        if image.image_id in self._cache:
            return self._cache[image.image_id]
        if image.regions is None:
            logger.debug("Image %s has no regions; using its global vector only", image.image_id)
            self._cache[image.image_id] = None
            return None

        matrix = image.regions.load()
        self.reads += 1
        if matrix.dim != image.dim:
            raise ContractError(
                f"Image {image.image_id}: region dim {matrix.dim} != global dim {image.dim}"
            )
        regions = matrix.as_float64()
        self._cache[image.image_id] = regions
        return regions


def build_evidence_set(q, selection: EvidenceSelection, images: Sequence[ImageEntry],
                       k_regions: int, loader: Optional[RegionLoader] = None) -> List[np.ndarray]:
    """
    Global vector of each chosen image plus its top-k regions by cosine to q

    Only chosen images have their regions loaded.

    Args:
        q: Unit query vector
        selection: Chosen image indices
        images: The sample's images
        k_regions: Regions per chosen image
        loader: Shared region cache (a fresh one when omitted)

    Returns:
        Evidence vectors in selection order; empty for an empty selection
    """
    loader = RegionLoader() if loader is None else loader
    evidence = []
    for i in selection.chosen:
        if not 0 <= i < len(images):
            raise ContractError(f"Selected image index {i} outside [0, {len(images)})")
        image = images[i]
        evidence.append(np.asarray(image.global_vec, dtype=np.float64))
        if k_regions <= 0:
            continue
        regions = loader.load(image)
        if regions is None:
            continue
        for m in top_k_regions(q, regions, k_regions):
            evidence.append(regions[m])
    return evidence


def fuse(h, z_set, eta: float, fuse_head: ProjectionHead) -> np.ndarray:
    """
    h_tilde = (1 - eta) * h + eta * fuse_head([h ; z_set])

    eta = 0 returns h unchanged.
    """
    if not 0.0 <= eta <= 1.0:
        raise ContractError(f"eta must lie in [0, 1], got {eta}")
    h = np.asarray(h, dtype=np.float64)
    if eta == 0.0:
        return h.copy()
    fused = fuse_head.apply(np.concatenate([h, np.asarray(z_set, dtype=np.float64)]))
    return (1.0 - eta) * h + eta * fused


def consistency(proj: ProjectionHead, h_tilde, z_set) -> float:
    """cosine(proj(h_tilde), z_set); 0.0 without evidence"""
    if z_set is None:
        return 0.0
    return cosine(proj.apply(h_tilde), z_set)
