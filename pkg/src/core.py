"""
Core Routing Engine
Gate -> calibrated routing -> image selection -> aggregation and fusion
-> energy decoding, with cost accounting per sample
"""
import logging
import math
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from bundle import ModelBundle
from errors import ContractError, SaverError, UnitError
from evaluation.cost_model import CostConfig, CostMeter
from fusion.gated_fusion import FusionConfig, RegionLoader, build_evidence_set, consistency, fuse
from fusion.projection import pair_features, span_rep
from fusion.set_encoder import set_encode_with_attention
from gating.groundability_gate import GateFeatures, gate_score, groundability_features, hard_gate, pair_gate
from scoring.energy_decoder import (
    CandidateSpan,
    EntityPrediction,
    decision_confidence,
    enumerate_spans,
    ner_decode,
    re_predict,
    relation_energy_terms,
    unit_energy_terms,
)
from selection.submodular_selector import EvidenceSelection, SisWeights, get_selector, similarity_bundle
from storage.dataset import Sample, UnitSpec

logger = logging.getLogger(__name__)

MODES = ('mner', 'mre')
GATE_POLICIES = ('calibrated', 'always_on', 'text_only')


@dataclass
class PipelineConfig:
    """Routing settings for one dataset and mode"""
    mode: str = 'mner'
    tau: float = math.inf
    budget_k: int = 2
    k_regions: int = 3
    lambda_rel: float = 1.0
    lambda_cov: float = 1.0
    lambda_cons: float = 1.0
    lambda_gate: float = 0.0
    cost: CostConfig = field(default_factory=CostConfig)
    selector: str = 'sis'
    gate_policy: str = 'calibrated'
    max_span_length: int = 10
    enumerate_spans: bool = False
    null_relation: Optional[int] = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gate_policy not in GATE_POLICIES:
            raise ContractError(f"gate_policy must be one of {GATE_POLICIES}, got {self.gate_policy!r}")
        if self.budget_k < 1:
            raise ContractError(f"budget_k must be >= 1, got {self.budget_k}")
        if self.k_regions < 0:
            raise ContractError(f"k_regions must be >= 0, got {self.k_regions}")
        if self.tau is None:
            self.tau = math.inf
        if math.isnan(self.tau):
            raise ContractError("tau must be a number or +inf")
        get_selector(self.selector)

    @property
    def sis_weights(self) -> SisWeights:
        return SisWeights(self.lambda_rel, self.lambda_cov)

    @classmethod
    def from_settings(cls, settings: dict, tau: Optional[float] = None) -> 'PipelineConfig':
        tau = settings.get('tau') if tau is None else tau
        return cls(
            mode=settings['mode'],
            tau=math.inf if tau is None else float(tau),
            budget_k=int(settings['budget_k']),
            k_regions=int(settings['k_regions']),
            lambda_rel=float(settings['lambda_rel']),
            lambda_cov=float(settings['lambda_cov']),
            lambda_cons=float(settings['lambda_cons']),
            lambda_gate=float(settings['lambda_gate']),
            cost=CostConfig(**settings['cost']),
            selector=settings['selector'],
            gate_policy=settings['gate_policy'],
            max_span_length=int(settings['max_span_length']),
            enumerate_spans=bool(settings['enumerate_spans']),
            null_relation=settings['null_relation'],
        )


@dataclass
class RoutedUnitTrace:
    """What happened to one unit"""
    unit_id: str
    kind: str
    spans: List[Tuple[int, int]]
    g: float
    gamma: int
    eta: float
    chosen_images: List[str] = field(default_factory=list)
    gains: List[float] = field(default_factory=list)
    objective: float = 0.0
    consis: float = 0.0
    energies: Dict[str, object] = field(default_factory=dict)
    decision: Optional[int] = None
    confidence: float = 0.0
    region_reads: int = 0
    attention: List[List[float]] = field(default_factory=list)

    def to_dict(self):
        result = asdict(self)
        result['spans'] = [list(s) for s in self.spans]
        return result


@dataclass
class SampleRouting:
    """Predictions and traces for one sample"""
    sample_id: str
    mode: str
    traces: List[RoutedUnitTrace]
    gamma_bar: float
    cost: float
    region_reads: int
    entities: Optional[EntityPrediction] = None
    relations: Dict[str, int] = field(default_factory=dict)

    def trace(self, unit_id: str) -> RoutedUnitTrace:
        for t in self.traces:
            if t.unit_id == unit_id:
                return t
        raise ContractError(f"No trace for unit {unit_id!r} in sample {self.sample_id!r}")

    def to_dict(self):
        result = {
            'sample_id': self.sample_id,
            'mode': self.mode,
            'gamma_bar': self.gamma_bar,
            'cost': self.cost,
            'region_reads': self.region_reads,
            'traces': [t.to_dict() for t in self.traces],
        }
        if self.mode == 'mner':
            result['entities'] = self.entities.to_list() if self.entities is not None else []
        else:
            result['relations'] = dict(self.relations)
        return result


@dataclass
class ForcedOnRecord:
    """Gate score and forced-on downstream loss of one unit"""
    sample_id: str
    unit_id: str
    score: float
    loss: int


@dataclass
class _EntityState:
    h: np.ndarray
    q: np.ndarray
    feats: GateFeatures
    g: float


@dataclass
class _Activation:
    selection: EvidenceSelection
    z: Optional[np.ndarray]
    attention: np.ndarray
    reads: int


class SaverPipeline:
    """
    Selective vision routing over precomputed embeddings

    Runs test-time hard routing: eta = g * gamma. Units whose gate is off
    never touch region matrices and are scored text-only.
    """

    def __init__(self, bundle: ModelBundle, config: PipelineConfig):
        """
        Initialize pipeline

        Args:
            bundle: Model weights
            config: Routing settings (tau from calibration)
        """
        self.bundle = bundle
        self.config = config
        self.heads = bundle.heads.with_lambdas(config.lambda_cons, config.lambda_gate)
        self.fusion = FusionConfig('test_hard')
        self.selector = get_selector(config.selector)

    def _gamma(self, g: float, has_images: bool, force_on: bool) -> int:
        if not has_images:
            return 0
        if force_on or self.config.gate_policy == 'always_on':
            return 1
        if self.config.gate_policy == 'text_only':
            return 0
        return hard_gate(g, self.config.tau)

    def entity_state(self, sample: Sample, span, globals_, cache: Dict) -> _EntityState:
        span = tuple(span)
        if span not in cache:
            h = span_rep(sample.tokens, span[0], span[1], self.bundle.span_proj)
            q = self.bundle.ent_proj.apply(h)
            feats = groundability_features(q, globals_)
            cache[span] = _EntityState(h, q, feats, gate_score(self.bundle.gate, h, feats))
        return cache[span]

    def _activate(self, sample: Sample, q, globals_, loader: RegionLoader) -> _Activation:
        reads_before = loader.reads
        bundle = similarity_bundle(q, globals_)
        selection = self.selector(bundle, self.config.sis_weights, self.config.budget_k)
        evidence = build_evidence_set(q, selection, sample.images, self.config.k_regions, loader)
        if not evidence:
            return _Activation(selection, None, np.zeros((0, 0)), loader.reads - reads_before)
        z, attention = set_encode_with_attention(evidence, self.bundle.set_encoder)
        return _Activation(selection, z, attention, loader.reads - reads_before)

    def _span_units(self, sample: Sample) -> List[UnitSpec]:
        units = [u for u in sample.units if not u.is_pair]
        if self.config.enumerate_spans:
            listed = {u.span for u in units}
            for span in enumerate_spans(sample.n_tokens, self.config.max_span_length):
                if span not in listed:
                    units.append(UnitSpec(f"span:{span[0]}-{span[1]}", 'span', span=span, gold=None))
        return units

    def _trace_activation(self, trace: RoutedUnitTrace, sample: Sample, act: Optional[_Activation]):
        if act is None:
            return
        trace.chosen_images = [sample.images[i].image_id for i in act.selection.chosen]
        trace.gains = list(act.selection.gains)
        trace.objective = act.selection.objective
        trace.region_reads = act.reads
        trace.attention = act.attention.tolist()

    def _route_span_unit(self, sample, unit, globals_, cache, loader, force_on):
        state = self.entity_state(sample, unit.span, globals_, cache)
        gamma = self._gamma(state.g, len(globals_) > 0, force_on)
        eta = self.fusion.eta(state.g, gamma)

        act = self._activate(sample, state.q, globals_, loader) if gamma else None
        z = act.z if act is not None else None
        if z is not None:
            h_tilde = fuse(state.h, z, eta, self.bundle.fuse_ent)
            consis = consistency(self.bundle.ent_proj, h_tilde, z)
        else:
            h_tilde, consis = state.h.copy(), 0.0
            eta = 0.0

        table = unit_energy_terms(h_tilde, eta, consis, self.heads)
        trace = RoutedUnitTrace(
            unit_id=unit.unit_id, kind='span', spans=[unit.span], g=state.g, gamma=gamma, eta=eta,
            consis=consis,
            energies={'delta0': float(table.span[0]), 'delta1': float(table.span[1]),
                      'type': table.type.tolist(), 'extra': table.extra},
            confidence=decision_confidence(table.decision_energies()),
        )
        self._trace_activation(trace, sample, act)
        candidate = CandidateSpan(span=unit.span, table=table, h_tilde=h_tilde, eta=eta,
                                  consis=consis, unit_id=unit.unit_id)
        return candidate, trace

    def _route_pair_unit(self, sample, unit, globals_, cache, loader, force_on):
        head = self.entity_state(sample, unit.head_span, globals_, cache)
        tail = self.entity_state(sample, unit.tail_span, globals_, cache)
        g = pair_gate(head.g, tail.g)
        gamma = self._gamma(g, len(globals_) > 0, force_on)
        eta = self.fusion.eta(g, gamma)

        u = pair_features(head.h, tail.h, unit.head_span, unit.tail_span, sample.n_tokens)
        q = self.bundle.pair_proj.apply(u)
        act = self._activate(sample, q, globals_, loader) if gamma else None
        z = act.z if act is not None else None
        if z is not None:
            u_tilde = fuse(u, z, eta, self.bundle.fuse_pair)
            consis = consistency(self.bundle.pair_proj, u_tilde, z)
        else:
            u_tilde, consis = u, 0.0
            eta = 0.0

        energies = relation_energy_terms(u_tilde, eta, consis, self.heads)
        relation = re_predict(u_tilde, eta, consis, self.heads)
        trace = RoutedUnitTrace(
            unit_id=unit.unit_id, kind='pair', spans=[unit.head_span, unit.tail_span], g=g,
            gamma=gamma, eta=eta, consis=consis,
            energies={'relation': energies.rel.tolist(), 'extra': energies.extra},
            decision=relation, confidence=decision_confidence(energies.rel),
        )
        self._trace_activation(trace, sample, act)
        return relation, trace

    def route_sample(self, sample: Sample, force_on: bool = False) -> SampleRouting:
        """
        Route every unit of a sample and decode

        Args:
            sample: Sample to process
            force_on: Activate vision for every unit (calibration recording)

        Returns:
            SampleRouting with predictions, per-unit traces, gamma_bar and cost

        Raises:
            UnitError: any failure, tagged with the sample and unit
        """
        cfg = self.config
        globals_ = sample.global_matrix()
        loader = RegionLoader()
        cache: Dict = {}
        traces: List[RoutedUnitTrace] = []

        def run(unit, fn):
            try:
                return fn(sample, unit, globals_, cache, loader, force_on)
            except UnitError:
                raise
            except (SaverError, ValueError) as e:
                raise UnitError(sample.id, unit.unit_id, e) from e

        entities = None
        relations: Dict[str, int] = {}
        if cfg.mode == 'mner':
            candidates = []
            for unit in self._span_units(sample):
                candidate, trace = run(unit, self._route_span_unit)
                candidates.append(candidate)
                traces.append(trace)
            try:
                entities = ner_decode(candidates, max_span_length=cfg.max_span_length)
            except ContractError as e:
                raise UnitError(sample.id, '*', e) from e
            for trace in traces:
                trace.decision = entities.type_of(trace.spans[0])
        else:
            for unit in sample.units:
                if not unit.is_pair:
                    raise UnitError(sample.id, unit.unit_id, ContractError("mre mode needs pair units"))
                relation, trace = run(unit, self._route_pair_unit)
                relations[unit.unit_id] = relation
                traces.append(trace)

        meter = CostMeter()
        meter.text_calls = int(bool(cache))
        meter.vglob_calls = int(len(globals_) > 0)
        meter.head_calls = int(bool(traces))
        for trace in traces:
            meter.record_unit(trace.gamma, len(trace.chosen_images))

        return SampleRouting(
            sample_id=sample.id,
            mode=cfg.mode,
            traces=traces,
            gamma_bar=meter.gamma_bar,
            cost=meter.cost(cfg.cost),
            region_reads=loader.reads,
            entities=entities,
            relations=relations,
        )

    def route_dataset(self, samples: List[Sample], jobs: int = 1,
                      force_on: bool = False) -> List[SampleRouting]:
        """Route samples, in parallel when jobs > 1; output ordered by sample id"""
        if jobs == 1:
            results = [self.route_sample(s, force_on) for s in samples]
        else:
            results = Parallel(n_jobs=jobs)(delayed(self.route_sample)(s, force_on) for s in samples)
        return sorted(results, key=lambda r: r.sample_id)

    def record_forced_on(self, samples: List[Sample],
                         gold: Optional[Dict[Tuple[str, str], Optional[int]]] = None,
                         jobs: int = 1) -> List[ForcedOnRecord]:
        """
        Run every unit with the gate forced on and record (g, loss)

        Span units: loss = 1 if the decoded entity decision or type is wrong.
        Pair units: loss = 1 if the predicted relation differs from gold.

        Args:
            samples: Calibration samples
            gold: Optional (sample_id, unit_id) -> label map overriding dataset gold
            jobs: Parallel workers

        Raises:
            ContractError: a unit has no gold label
        """
        by_id = {s.id: s for s in samples}
        records = []
        for routing in self.route_dataset(samples, jobs=jobs, force_on=True):
            sample = by_id[routing.sample_id]
            listed = {u.unit_id: u for u in sample.units}
            for trace in routing.traces:
                label = self._gold_label(sample, listed.get(trace.unit_id), trace, gold)
                if trace.kind == 'pair':
                    loss = int(trace.decision != label)
                else:
                    is_entity = label is not None
                    predicted = trace.decision is not None
                    loss = int(predicted != is_entity or (is_entity and trace.decision != label))
                records.append(ForcedOnRecord(sample.id, trace.unit_id, trace.g, loss))
        return records

    def record_forced_on_losses(self, samples: List[Sample],
                                gold: Optional[Dict[Tuple[str, str], Optional[int]]] = None,
                                jobs: int = 1) -> List[Tuple[float, int]]:
        return [(r.score, r.loss) for r in self.record_forced_on(samples, gold, jobs)]

    @staticmethod
    def _gold_label(sample: Sample, unit: Optional[UnitSpec], trace: RoutedUnitTrace, gold):
        if unit is None:
            # enumerated span not listed in the dataset
            if gold is not None and (sample.id, trace.unit_id) in gold:
                return gold[(sample.id, trace.unit_id)]
            return None
        if gold is not None:
            key = (sample.id, unit.unit_id)
            if key not in gold:
                raise ContractError(f"No gold label for sample {sample.id!r}, unit {unit.unit_id!r}")
            label = gold[key]
        else:
            label = unit.gold
        if unit.is_pair and label is None:
            raise ContractError(f"Pair unit {unit.unit_id!r} of sample {sample.id!r} has no gold relation")
        return label

    def select_for_unit(self, sample: Sample, unit_id: str) -> dict:
        """Image selection for one unit, regardless of its gate"""
        unit = sample.unit(unit_id)
        globals_ = sample.global_matrix()
        cache: Dict = {}
        if unit.is_pair:
            head = self.entity_state(sample, unit.head_span, globals_, cache)
            tail = self.entity_state(sample, unit.tail_span, globals_, cache)
            g = pair_gate(head.g, tail.g)
            u = pair_features(head.h, tail.h, unit.head_span, unit.tail_span, sample.n_tokens)
            q = self.bundle.pair_proj.apply(u)
        else:
            state = self.entity_state(sample, unit.span, globals_, cache)
            g, q = state.g, state.q

        selection = self.selector(similarity_bundle(q, globals_), self.config.sis_weights, self.config.budget_k)
        return {
            'sample_id': sample.id,
            'unit_id': unit_id,
            'g': g,
            'gamma': self._gamma(g, len(globals_) > 0, False),
            'image_ids': [sample.images[i].image_id for i in selection.chosen],
            **selection.to_dict(),
        }
