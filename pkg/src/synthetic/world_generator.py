"""
Synthetic Worlds
Samples with known ground truth: every unit records whether it is
groundable and the probability that activating vision makes it wrong.

Image roles for each sample:
    image 0       useful: the sample topic t
    images 1..N-1 redundant (near-copy of t), misleading (anti-aligned
                  with t) or an unrelated distractor

Groundable units query normalize(t + noise). Non-groundable units keep
only a (1 - relevance_gap) share of t and point the rest in a direction
orthogonal to every image of their sample.
"""
import json
import logging
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from bundle import ModelBundle
from calibration.threshold_calibrator import CalibrationInput, calibrate_threshold
from errors import ContractError
from evaluation.selective_metrics import act_cov_at, risk_coverage
from fusion.projection import ProjectionHead, N_DISTANCE_FEATURES
from fusion.set_encoder import SetEncoder
from gating.groundability_gate import GateModel, gate_scores_batch, groundability_features_batch
from scoring.energy_decoder import ScoringHeads
from storage.dataset import ImageEntry, MatrixRef, Sample, UnitSpec, write_dataset
from storage.embedding_io import EmbeddingMatrix

logger = logging.getLogger(__name__)

ROLE_USEFUL, ROLE_REDUNDANT, ROLE_MISLEADING, ROLE_DISTRACTOR = 0, 1, 2, 3
REDUNDANT_JITTER = 0.1
REGION_JITTER = 0.5

# gate used by synthetic pipelines: g = sigmoid(6 * psi_max - 3)
SYNTH_GATE_FEATURE_WEIGHTS = (6.0, 0.0, 0.0, 0.0)
SYNTH_GATE_BIAS = -3.0


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of a synthetic world"""
    n_samples: int = 200
    images_min: int = 2
    images_max: int = 4
    dim: int = 16
    groundable_fraction: float = 0.5
    noise_scale: float = 0.3
    relevance_gap: float = 0.5
    seed: int = 0
    mode: str = 'mner'
    units_per_sample: int = 2
    regions_per_image: int = 4
    p_redundant: float = 0.3
    p_misleading: float = 0.3
    grounded_error: float = 0.02
    ungrounded_error: float = 0.9
    text_error: float = 0.15
    n_types: int = 4
    n_relations: int = 5
    non_entity_fraction: float = 0.3

    def __post_init__(self):
        fractions = ('groundable_fraction', 'relevance_gap', 'p_redundant', 'p_misleading',
                     'grounded_error', 'ungrounded_error', 'text_error', 'non_entity_fraction')
        for name in fractions:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {value}")
        if self.p_redundant + self.p_misleading > 1.0:
            raise ContractError("p_redundant + p_misleading must be <= 1")
        if self.dim < 2:
            raise ContractError(f"dim must be >= 2, got {self.dim}")
        if not 0 <= self.images_min <= self.images_max:
            raise ContractError("Need 0 <= images_min <= images_max")
        if self.noise_scale < 0:
            raise ContractError("noise_scale must be >= 0")
        if self.mode not in ('mner', 'mre'):
            raise ContractError(f"mode must be 'mner' or 'mre', got {self.mode!r}")
        if self.units_per_sample < 1 or self.n_types < 1 or self.n_relations < 1:
            raise ContractError("units_per_sample, n_types and n_relations must be >= 1")

    def replace(self, **changes) -> 'WorldConfig':
        return WorldConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class UnitTruth:
    """Ground truth of one unit"""
    sample_id: str
    unit_id: str
    groundable: bool
    error_prob: float
    text_error_prob: float
    loss_if_activated: int
    loss_text_only: int
    gold: Optional[int]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MonteCarloReport:
    runs: int
    alpha: float
    delta: float
    calibration_size: int
    test_size: int
    violation_rate: float
    mean_coverage: float
    mean_oracle_coverage: float
    mean_true_risk: float
    infeasible_rate: float
    true_risks: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        result = asdict(self)
        result.pop('true_risks')
        return result


# ---------------------------------------------------------------------------
# Vectorized draws
# ---------------------------------------------------------------------------

def _normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)


def _noise(rng, shape, scale: float) -> np.ndarray:
    # isotropic with expected norm close to `scale`
    return rng.normal(0.0, scale / math.sqrt(shape[-1]), size=shape)


def _draw_images(cfg: WorldConfig, rng, n: int):
    """Topics, padded global vectors (n, N, d), mask and roles"""
    d, n_max = cfg.dim, max(cfg.images_max, 1)
    topics = _normalize(rng.normal(size=(n, d)))
    counts = rng.integers(cfg.images_min, cfg.images_max + 1, size=n)
    mask = np.arange(n_max)[None, :] < counts[:, None]

    u = rng.random(size=(n, n_max))
    roles = np.where(u < cfg.p_redundant, ROLE_REDUNDANT,
                     np.where(u < cfg.p_redundant + cfg.p_misleading, ROLE_MISLEADING, ROLE_DISTRACTOR))
    roles[:, 0] = ROLE_USEFUL

    t = topics[:, None, :]
    redundant = _normalize(t + _noise(rng, (n, n_max, d), REDUNDANT_JITTER))
    distractor = _normalize(rng.normal(size=(n, n_max, d)))
    globals_ = np.where((roles == ROLE_USEFUL)[..., None], t,
               np.where((roles == ROLE_REDUNDANT)[..., None], redundant,
               np.where((roles == ROLE_MISLEADING)[..., None], -t, distractor)))
    globals_ = np.where(mask[..., None], globals_, 0.0)
    return topics, globals_, mask, roles


def _orthogonal_directions(rng, globals_: np.ndarray, topics: np.ndarray) -> np.ndarray:
    """Unit vectors orthogonal to every (unmasked) global of each row"""
    n, _, d = globals_.shape
    r = rng.normal(size=(n, d))
    # projector onto the complement of each row's image span; padded rows are zero
    pinv = np.linalg.pinv(globals_)
    span_part = np.einsum('bdn,bn->bd', pinv, np.einsum('bnd,bd->bn', globals_, r))
    o = r - span_part
    weak = np.linalg.norm(o, axis=1) < 1e-8
    if np.any(weak):
        # images span the space; settle for orthogonal to the topic
        fallback = r[weak] - np.sum(r[weak] * topics[weak], axis=1, keepdims=True) * topics[weak]
        o[weak] = fallback
    return _normalize(o)


def _draw_queries(cfg: WorldConfig, rng, topics, globals_, groundable: np.ndarray) -> np.ndarray:
    n, d = topics.shape
    noise = _noise(rng, (n, d), cfg.noise_scale)
    c = 1.0 - cfg.relevance_gap
    o = _orthogonal_directions(rng, globals_, topics)
    off_topic = c * topics + math.sqrt(max(0.0, 1.0 - c * c)) * o
    base = np.where(groundable[:, None], topics, off_topic)
    return _normalize(base + noise)


def _draw_world_arrays(cfg: WorldConfig, rng, n: int) -> Dict[str, np.ndarray]:
    """One unit per draw: queries, images and true error probabilities"""
    topics, globals_, mask, roles = _draw_images(cfg, rng, n)
    groundable = rng.random(size=n) < cfg.groundable_fraction
    queries = _draw_queries(cfg, rng, topics, globals_, groundable)
    has_image = mask.any(axis=1)
    error_prob = np.where(groundable & has_image, cfg.grounded_error, cfg.ungrounded_error)
    return {
        'queries': queries,
        'globals': globals_,
        'mask': mask,
        'roles': roles,
        'groundable': groundable,
        'error_prob': error_prob,
    }


def synthetic_gate_scores(queries, globals_, mask) -> np.ndarray:
    """Scores of the synthetic gate computed on the batch feature path"""
    queries = np.asarray(queries, dtype=np.float64)
    feats, _ = groundability_features_batch(queries, globals_, mask)
    model = GateModel.feature_only(queries.shape[1], SYNTH_GATE_FEATURE_WEIGHTS, SYNTH_GATE_BIAS)
    return gate_scores_batch(model, queries, feats)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _span_layout(rng, n_units: int, pair: bool):
    """Sequential spans of length 1-3 separated by one filler token"""
    n_spans = 2 if pair else n_units
    lengths = rng.integers(1, 4, size=n_spans)
    spans, pos = [], 1
    for length in lengths:
        spans.append((pos, pos + int(length) - 1))
        pos += int(length) + 1
    return spans, pos


def generate_world(cfg: WorldConfig) -> Tuple[List[Sample], List[UnitTruth]]:
    """
    Build a dataset with per-unit ground truth

    Span rows of a unit equal its query vector, so a mean span extractor
    recovers the query exactly. MRE samples carry a single marked pair whose
    head and tail spans both hold the pair query.

    Returns:
        (samples, truth) with truth in dataset unit order
    """
    rng = np.random.default_rng(cfg.seed)
    is_pair = cfg.mode == 'mre'
    units_per_sample = 1 if is_pair else cfg.units_per_sample

    topics, globals_, mask, _ = _draw_images(cfg, rng, cfg.n_samples)
    owner = np.repeat(np.arange(cfg.n_samples), units_per_sample)
    groundable = rng.random(size=owner.size) < cfg.groundable_fraction
    queries = _draw_queries(cfg, rng, topics[owner], globals_[owner], groundable)
    has_image = mask.any(axis=1)[owner]
    error_prob = np.where(groundable & has_image, cfg.grounded_error, cfg.ungrounded_error)
    loss_active = (rng.random(size=owner.size) < error_prob).astype(int)
    loss_text = (rng.random(size=owner.size) < cfg.text_error).astype(int)

    samples, truth = [], []
    unit_index = 0
    for s in range(cfg.n_samples):
        sample_id = f"s{s:06d}"
        spans, n_tokens = _span_layout(rng, units_per_sample, is_pair)
        tokens = _normalize(rng.normal(size=(n_tokens, cfg.dim)))

        images = []
        for j in np.flatnonzero(mask[s]):
            g = globals_[s, j]
            regions = _normalize(g[None, :] + _noise(rng, (cfg.regions_per_image, cfg.dim), REGION_JITTER))
            images.append(ImageEntry(
                image_id=f"img{j}",
                global_vec=EmbeddingMatrix(g[None, :]).data[0],
                regions=MatrixRef.from_matrix(EmbeddingMatrix(regions)) if cfg.regions_per_image else None,
            ))

        units = []
        for k in range(units_per_sample):
            i = unit_index
            unit_index += 1
            q = queries[i]
            unit_id = f"u{k}"
            if is_pair:
                head, tail = spans
                for a, b in (head, tail):
                    tokens[a:b + 1] = q
                gold = int(rng.integers(0, cfg.n_relations))
                units.append(UnitSpec(unit_id, 'pair', head_span=head, tail_span=tail, gold=gold))
            else:
                a, b = spans[k]
                tokens[a:b + 1] = q
                gold = None if rng.random() < cfg.non_entity_fraction else int(rng.integers(0, cfg.n_types))
                units.append(UnitSpec(unit_id, 'span', span=(a, b), gold=gold))
            truth.append(UnitTruth(
                sample_id=sample_id,
                unit_id=unit_id,
                groundable=bool(groundable[i]),
                error_prob=float(error_prob[i]),
                text_error_prob=cfg.text_error,
                loss_if_activated=int(loss_active[i]),
                loss_text_only=int(loss_text[i]),
                gold=gold,
            ))

        samples.append(Sample(id=sample_id, tokens=EmbeddingMatrix(tokens), images=images, units=units))

    logger.info("Generated %d %s samples, %d units (%.0f%% groundable)",
                len(samples), cfg.mode, len(truth), 100.0 * groundable.mean() if truth else 0.0)
    return samples, truth


def write_truth(truth: List[UnitTruth], path: Union[str, Path]) -> None:
    with open(path, 'w') as f:
        for t in truth:
            f.write(json.dumps(t.to_dict()) + '\n')


def load_truth(path: Union[str, Path]) -> List[UnitTruth]:
    with open(path, 'r') as f:
        return [UnitTruth(**json.loads(line)) for line in f if line.strip()]


def write_world(samples: List[Sample], truth: List[UnitTruth], out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write dataset.jsonl, its matrices and truth.jsonl under out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = write_dataset(samples, out_dir / 'dataset.jsonl', out_dir / 'matrices')
    truth_path = out_dir / 'truth.jsonl'
    write_truth(truth, truth_path)
    return {'dataset': dataset_path, 'truth': truth_path}


def synthetic_bundle(cfg: WorldConfig, heads: int = 2, ff_dim: int = 32, seed: Optional[int] = None,
                     **head_kwargs) -> ModelBundle:
    """
    Weights under which generated queries reach the gate unchanged

    span_proj keeps only the span mean, ent_proj is the identity and
    pair_proj averages head and tail, so q equals the generated query.
    """
    d = cfg.dim
    seed = cfg.seed if seed is None else seed
    pair_dim = 2 * d + N_DISTANCE_FEATURES
    eye = np.eye(d)

    span = np.vstack([np.zeros((d, d)), np.zeros((d, d)), eye])
    pair = np.vstack([0.5 * eye, 0.5 * eye, np.zeros((N_DISTANCE_FEATURES, d))])
    fuse_ent = np.vstack([0.5 * eye, 0.5 * eye])
    fuse_pair = np.zeros((pair_dim + d, pair_dim))
    fuse_pair[:pair_dim, :pair_dim] = 0.5 * np.eye(pair_dim)
    fuse_pair[pair_dim:, :d] = 0.5 * eye
    fuse_pair[pair_dim:, d:2 * d] = 0.5 * eye

    return ModelBundle(
        span_proj=ProjectionHead(span, np.zeros(d)),
        ent_proj=ProjectionHead.identity(d),
        pair_proj=ProjectionHead(pair, np.zeros(d)),
        gate=GateModel.feature_only(d, SYNTH_GATE_FEATURE_WEIGHTS, SYNTH_GATE_BIAS),
        set_encoder=SetEncoder.seeded(d, heads, ff_dim, seed),
        fuse_ent=ProjectionHead(fuse_ent, np.zeros(d)),
        fuse_pair=ProjectionHead(fuse_pair, np.zeros(pair_dim)),
        heads=ScoringHeads.seeded(d, pair_dim, cfg.n_types, cfg.n_relations, seed, **head_kwargs),
    )


# ---------------------------------------------------------------------------
# Monte Carlo check of the calibration guarantee
# ---------------------------------------------------------------------------

def _one_calibration_run(cfg: WorldConfig, alpha: float, delta: float,
                         calibration_size: int, test_size: int, seed_seq) -> Tuple[float, float, float, bool]:
    rng = np.random.default_rng(seed_seq)
    world = _draw_world_arrays(cfg, rng, calibration_size + test_size)
    scores = synthetic_gate_scores(world['queries'], world['globals'], world['mask'])
    losses = (rng.random(size=scores.size) < world['error_prob']).astype(int)

    cal, test = slice(0, calibration_size), slice(calibration_size, None)
    result = calibrate_threshold(CalibrationInput(scores[cal], losses[cal], alpha, delta))

    test_scores, test_error = scores[test], world['error_prob'][test]
    oracle = act_cov_at(risk_coverage(test_scores, test_error), alpha)
    if not result.feasible:
        return 0.0, 0.0, oracle, False

    active = test_scores >= result.tau
    coverage = float(active.mean())
    true_risk = float(test_error[active].mean()) if active.any() else 0.0
    return true_risk, coverage, oracle, True


def monte_carlo_calibration_check(cfg: WorldConfig, alpha: float = 0.10, delta: float = 0.05,
                                  runs: int = 500, calibration_size: int = 500,
                                  test_size: int = 1000, jobs: int = 1) -> MonteCarloReport:
    """
    Repeat draw -> calibrate -> measure the TRUE activated risk on fresh units

    Each run draws calibration_size + test_size i.i.d. units (one per
    sample), calibrates on the first part and evaluates the mean recorded
    error probability of the activated test units.

    Returns:
        MonteCarloReport; violation_rate is the fraction of runs whose true
        activated risk exceeds alpha
    """
    if runs < 1:
        raise ContractError("runs must be >= 1")
    if runs < 100:
        logger.warning("Only %d Monte Carlo runs; the violation rate will be noisy", runs)

    seeds = np.random.SeedSequence(cfg.seed).spawn(runs)
    outcomes = Parallel(n_jobs=jobs)(
        delayed(_one_calibration_run)(cfg, alpha, delta, calibration_size, test_size, s) for s in seeds
    )

    risks = np.array([o[0] for o in outcomes])
    coverages = np.array([o[1] for o in outcomes])
    oracles = np.array([o[2] for o in outcomes])
    feasible = np.array([o[3] for o in outcomes])

    report = MonteCarloReport(
        runs=runs,
        alpha=alpha,
        delta=delta,
        calibration_size=calibration_size,
        test_size=test_size,
        violation_rate=float(np.mean(risks > alpha)),
        mean_coverage=float(coverages.mean()),
        mean_oracle_coverage=float(oracles.mean()),
        mean_true_risk=float(risks[feasible].mean()) if feasible.any() else 0.0,
        infeasible_rate=float(1.0 - feasible.mean()),
        true_risks=risks.tolist(),
    )
    logger.info("Monte Carlo: violation rate %.3f, coverage %.3f (oracle %.3f)",
                report.violation_rate, report.mean_coverage, report.mean_oracle_coverage)
    return report
