import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent.absolute()
sys.path.insert(0, str(project_root / 'src'))
sys.path.insert(0, str(project_root))

from selection.submodular_selector import SimilarityBundle  # noqa: E402
from storage.dataset import ImageEntry, MatrixRef, Sample, UnitSpec  # noqa: E402
from storage.embedding_io import EmbeddingMatrix  # noqa: E402
from synthetic.world_generator import WorldConfig, generate_world, synthetic_bundle  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def worked_instance():
    """Three images: r = [0.9, 0.8, 0.2], d_12 = 0.95, d_13 = d_23 = 0.3"""
    r = np.array([0.9, 0.8, 0.2])
    d = np.array([
        [1.0, 0.95, 0.3],
        [0.95, 1.0, 0.3],
        [0.3, 0.3, 1.0],
    ])
    return SimilarityBundle(r_tilde=r, d_tilde=d)


def random_bundle(rng, n: int) -> SimilarityBundle:
    r = rng.random(n)
    d = rng.random((n, n))
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 1.0)
    return SimilarityBundle(r_tilde=r, d_tilde=d)


def make_sample(sample_id='s0', n_tokens=6, dim=4, n_images=3, n_regions=4, units=None, seed=0):
    """Small random sample with inline regions"""
    rng = np.random.default_rng(seed)
    tokens = EmbeddingMatrix(rng.normal(size=(n_tokens, dim)))
    images = []
    for j in range(n_images):
        g = rng.normal(size=dim)
        regions = MatrixRef.from_matrix(EmbeddingMatrix(rng.normal(size=(n_regions, dim)))) if n_regions else None
        images.append(ImageEntry(f"img{j}", EmbeddingMatrix(g[None, :]).data[0], regions))
    if units is None:
        units = [UnitSpec('u0', 'span', span=(0, 1), gold=1), UnitSpec('u1', 'span', span=(3, 3), gold=None)]
    return Sample(id=sample_id, tokens=tokens, images=images, units=units)


@pytest.fixture
def mner_world():
    cfg = WorldConfig(n_samples=60, seed=3)
    samples, truth = generate_world(cfg)
    return cfg, samples, truth


@pytest.fixture
def mre_world():
    cfg = WorldConfig(n_samples=60, seed=4, mode='mre')
    samples, truth = generate_world(cfg)
    return cfg, samples, truth


@pytest.fixture
def mner_bundle(mner_world):
    cfg, _, _ = mner_world
    return synthetic_bundle(cfg)


@pytest.fixture
def mre_bundle(mre_world):
    cfg, _, _ = mre_world
    return synthetic_bundle(cfg)
