import math

import numpy as np
import pytest

from calibration.threshold_calibrator import CalibrationInput, calibrate_threshold
from core import PipelineConfig, SaverPipeline
from errors import ContractError, UnitError
from evaluation.cost_model import always_on_cost, estimate_cost
from storage.dataset import ImageEntry, MatrixRef, Sample, UnitSpec, load_dataset
from storage.embedding_io import EmbeddingMatrix
from synthetic.world_generator import WorldConfig, generate_world, synthetic_bundle, write_world

SMALL = WorldConfig(dim=4, n_types=2, n_relations=3)


def _axis(i, dim=4):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def _image(image_id, direction, n_regions=3):
    regions = np.vstack([direction + 0.1 * _axis((k + 1) % 4) for k in range(n_regions)])
    return ImageEntry(image_id, EmbeddingMatrix(direction[None, :]).data[0],
                      MatrixRef.from_matrix(EmbeddingMatrix(regions)))


def _aligned_sample(rows, units, images=None):
    """Tokens built from axis indices; the images point along axis 0 by default"""
    tokens = EmbeddingMatrix(np.vstack([_axis(i) for i in rows]))
    if images is None:
        images = [_image('img0', _axis(0)), _image('img1', _axis(0) + 0.2 * _axis(3))]
    return Sample(id='s0', tokens=tokens, images=images, units=units)


def _pipeline(world_cfg=SMALL, **kwargs):
    return SaverPipeline(synthetic_bundle(world_cfg), PipelineConfig(**kwargs))


def _activated(routings):
    return {(r.sample_id, t.unit_id) for r in routings for t in r.traces if t.gamma}


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def test_infinite_tau_is_text_only(mner_world, mner_bundle):
    _, samples, _ = mner_world
    config = PipelineConfig(tau=math.inf)
    routings = SaverPipeline(mner_bundle, config).route_dataset(samples)
    no_activation = estimate_cost(config.cost, 0.0, config.budget_k)
    for r in routings:
        assert r.region_reads == 0
        assert r.gamma_bar == 0.0
        assert r.cost == no_activation
        assert all(t.gamma == 0 and t.eta == 0.0 and t.consis == 0.0 for t in r.traces)
        assert all(t.chosen_images == [] for t in r.traces)


def test_text_only_routing_never_reads_region_files(tmp_path, mner_world, mner_bundle):
    _, samples, truth = mner_world
    paths = write_world(samples[:10], truth, tmp_path)
    for region_file in (tmp_path / 'matrices').glob('*.regions.bin'):
        region_file.write_bytes(b'junk')

    loaded = load_dataset(paths['dataset'])
    routings = SaverPipeline(mner_bundle, PipelineConfig()).route_dataset(loaded)
    assert len(routings) == 10
    assert sum(r.region_reads for r in routings) == 0

    with pytest.raises(UnitError):
        SaverPipeline(mner_bundle, PipelineConfig(gate_policy='always_on')).route_sample(loaded[0])


def test_generated_queries_reach_the_gate_unchanged(mner_world, mner_bundle):
    _, samples, _ = mner_world
    pipeline = SaverPipeline(mner_bundle, PipelineConfig())
    sample = samples[0]
    unit = sample.units[0]
    state = pipeline.entity_state(sample, unit.span, sample.global_matrix(), {})
    np.testing.assert_allclose(state.q, sample.tokens.data[unit.span[0]], atol=1e-6)


def test_pair_gate_takes_the_larger_score():
    sample = _aligned_sample([0, 2, 1], [UnitSpec('u0', 'pair', head_span=(0, 0), tail_span=(2, 2), gold=1)])
    pipeline = _pipeline(mode='mre', tau=0.5)
    routing = pipeline.route_sample(sample)
    trace = routing.trace('u0')

    cache = {}
    head = pipeline.entity_state(sample, (0, 0), sample.global_matrix(), cache)
    tail = pipeline.entity_state(sample, (2, 2), sample.global_matrix(), cache)
    assert head.g == pytest.approx(1 / (1 + math.exp(-3)))
    assert tail.g < 0.5
    assert trace.g == head.g
    assert trace.gamma == 1
    assert routing.gamma_bar == 1.0
    assert routing.relations['u0'] == trace.decision


def test_half_the_units_activated():
    units = [UnitSpec(f"u{k}", 'span', span=(2 * k, 2 * k)) for k in range(4)]
    sample = _aligned_sample([0, 2, 0, 2, 1, 2, 1], units)
    config = PipelineConfig(tau=0.5)
    routing = SaverPipeline(synthetic_bundle(SMALL), config).route_sample(sample)
    assert [t.gamma for t in routing.traces] == [1, 1, 0, 0]
    assert routing.gamma_bar == 0.5
    assert routing.cost == estimate_cost(config.cost, 0.5, config.budget_k)
    assert routing.cost < always_on_cost(config.cost, config.budget_k)


def test_activated_units_share_region_reads():
    units = [UnitSpec('u0', 'span', span=(0, 0)), UnitSpec('u1', 'span', span=(2, 2))]
    sample = _aligned_sample([0, 2, 0], units)
    routing = _pipeline(tau=0.5, budget_k=1).route_sample(sample)
    assert [t.chosen_images for t in routing.traces] == [['img0'], ['img0']]
    assert routing.region_reads == 1
    assert [t.region_reads for t in routing.traces] == [1, 0]


def test_activated_trace_contents():
    sample = _aligned_sample([0, 2], [UnitSpec('u0', 'span', span=(0, 0))])
    config = PipelineConfig(tau=0.5, k_regions=2)
    trace = SaverPipeline(synthetic_bundle(SMALL), config).route_sample(sample).trace('u0')
    assert trace.gamma == 1
    assert trace.eta == pytest.approx(trace.g)
    assert 1 <= len(trace.chosen_images) <= config.budget_k
    assert len(trace.gains) == len(trace.chosen_images)
    n_evidence = len(trace.chosen_images) * (1 + config.k_regions)
    assert np.array(trace.attention).shape == (2, n_evidence)
    assert -1.0 <= trace.consis <= 1.0
    assert 0.0 < trace.confidence <= 1.0
    assert set(trace.energies) == {'delta0', 'delta1', 'type', 'extra'}


def test_sample_without_images_stays_text_only():
    sample = _aligned_sample([0, 1], [UnitSpec('u0', 'span', span=(0, 1))], images=[])
    routing = _pipeline(gate_policy='always_on').route_sample(sample)
    assert routing.traces[0].gamma == 0
    assert routing.traces[0].g == pytest.approx(1 / (1 + math.exp(3)))


def test_gate_policies(mner_world, mner_bundle):
    _, samples, _ = mner_world
    always = SaverPipeline(mner_bundle, PipelineConfig(gate_policy='always_on')).route_dataset(samples[:10])
    never = SaverPipeline(mner_bundle, PipelineConfig(tau=0.0, gate_policy='text_only')).route_dataset(samples[:10])
    assert all(r.gamma_bar == 1.0 for r in always)
    assert all(r.gamma_bar == 0.0 for r in never)


def test_topk_selector_baseline(mner_world, mner_bundle):
    _, samples, _ = mner_world
    routing = SaverPipeline(mner_bundle, PipelineConfig(tau=0.0, selector='topk')).route_sample(samples[0])
    assert all(len(t.chosen_images) <= 2 for t in routing.traces)


def test_enumerated_candidates_decode_without_overlap(mner_world, mner_bundle):
    _, samples, _ = mner_world
    config = PipelineConfig(tau=0.5, enumerate_spans=True, max_span_length=3)
    routing = SaverPipeline(mner_bundle, config).route_sample(samples[0])
    spans = routing.entities.spans()
    assert all(b1 < a2 for (_, b1), (a2, _) in zip(spans, spans[1:]))
    assert len(routing.traces) > len(samples[0].units)


def test_unit_errors_carry_context():
    bad = Sample(id='bad', tokens=EmbeddingMatrix(np.ones((3, 5))), units=[UnitSpec('u7', 'span', span=(0, 1))])
    with pytest.raises(UnitError) as info:
        _pipeline().route_sample(bad)
    assert info.value.sample_id == 'bad'
    assert info.value.unit_id == 'u7'
    assert isinstance(info.value.cause, ContractError)


def test_mre_mode_rejects_span_units():
    sample = _aligned_sample([0, 1], [UnitSpec('u0', 'span', span=(0, 0))])
    with pytest.raises(UnitError):
        _pipeline(mode='mre').route_sample(sample)


def test_config_contracts():
    with pytest.raises(ContractError):
        PipelineConfig(mode='vqa')
    with pytest.raises(ContractError):
        PipelineConfig(budget_k=0)
    with pytest.raises(ContractError):
        PipelineConfig(selector='dpp')
    assert PipelineConfig(tau=None).tau == math.inf


# ---------------------------------------------------------------------------
# Properties over whole worlds
# ---------------------------------------------------------------------------

def test_activation_sets_are_nested_in_tau(mner_world, mner_bundle):
    _, samples, _ = mner_world
    previous = None
    for tau in (0.0, 0.3, 0.5, 0.7, 0.9, 1.0, math.inf):
        current = _activated(SaverPipeline(mner_bundle, PipelineConfig(tau=tau)).route_dataset(samples))
        if previous is not None:
            assert current <= previous
        previous = current
    assert previous == set()


def test_cost_matches_the_estimate(mre_world, mre_bundle):
    _, samples, _ = mre_world
    config = PipelineConfig(mode='mre', tau=0.5)
    for r in SaverPipeline(mre_bundle, config).route_dataset(samples):
        assert r.gamma_bar in (0.0, 1.0)
        assert len(r.traces[0].chosen_images) == config.budget_k * r.traces[0].gamma
        assert r.cost == pytest.approx(estimate_cost(config.cost, r.gamma_bar, config.budget_k), abs=1e-12)


def test_cost_counts_the_images_actually_fused():
    sample = _aligned_sample([0, 2], [UnitSpec('u0', 'span', span=(0, 0))], images=[_image('img0', _axis(0))])
    config = PipelineConfig(gate_policy='always_on', budget_k=3)
    routing = SaverPipeline(synthetic_bundle(SMALL), config).route_sample(sample)
    assert routing.trace('u0').chosen_images == ['img0']
    assert routing.region_reads == 1
    assert routing.cost == 20.0 + config.cost.per_k
    assert routing.cost < estimate_cost(config.cost, 1.0, 3)


def test_sample_without_images_skips_the_image_encoder():
    sample = _aligned_sample([0, 2], [UnitSpec('u0', 'span', span=(0, 0))], images=[])
    config = PipelineConfig(gate_policy='always_on')
    routing = SaverPipeline(synthetic_bundle(SMALL), config).route_sample(sample)
    assert routing.gamma_bar == 0.0
    assert routing.cost == config.cost.f_text + config.cost.f_head


def test_routing_is_deterministic_across_workers(mner_world, mner_bundle):
    _, samples, _ = mner_world
    pipeline = SaverPipeline(mner_bundle, PipelineConfig(tau=0.5))
    serial = [r.to_dict() for r in pipeline.route_dataset(samples[:20], jobs=1)]
    again = [r.to_dict() for r in pipeline.route_dataset(samples[:20], jobs=1)]
    parallel = [r.to_dict() for r in pipeline.route_dataset(samples[:20], jobs=2)]
    assert serial == again == parallel
    assert [r['sample_id'] for r in serial] == sorted(s.id for s in samples[:20])


def test_select_for_unit(mner_world, mner_bundle):
    _, samples, _ = mner_world
    out = SaverPipeline(mner_bundle, PipelineConfig(budget_k=1)).select_for_unit(samples[0], 'u0')
    assert out['sample_id'] == samples[0].id and out['unit_id'] == 'u0'
    assert len(out['chosen']) == len(out['image_ids']) == 1
    assert out['gamma'] == 0
    with pytest.raises(ContractError):
        SaverPipeline(mner_bundle, PipelineConfig()).select_for_unit(samples[0], 'nope')


# ---------------------------------------------------------------------------
# Forced-on recording
# ---------------------------------------------------------------------------

def test_forced_on_records_every_unit(mner_world, mner_bundle):
    _, samples, truth = mner_world
    pipeline = SaverPipeline(mner_bundle, PipelineConfig())
    records = pipeline.record_forced_on(samples)
    assert len(records) == len(truth)
    assert [(r.sample_id, r.unit_id) for r in records] == [(t.sample_id, t.unit_id) for t in truth]
    assert all(r.loss in (0, 1) for r in records)

    routed = pipeline.route_dataset(samples, force_on=True)
    scores = [t.g for r in routed for t in r.traces]
    assert [r.score for r in records] == scores
    assert pipeline.record_forced_on_losses(samples) == [(r.score, r.loss) for r in records]


def test_exact_predictions_have_zero_loss(mner_world, mner_bundle):
    _, samples, _ = mner_world
    pipeline = SaverPipeline(mner_bundle, PipelineConfig())
    routed = pipeline.route_dataset(samples[:10], force_on=True)
    gold = {(r.sample_id, t.unit_id): t.decision for r in routed for t in r.traces}
    assert all(r.loss == 0 for r in pipeline.record_forced_on(samples[:10], gold))


def test_wrong_relation_is_a_loss(mre_world, mre_bundle):
    cfg, samples, _ = mre_world
    pipeline = SaverPipeline(mre_bundle, PipelineConfig(mode='mre'))
    routed = pipeline.route_dataset(samples[:10], force_on=True)
    gold = {(r.sample_id, t.unit_id): (t.decision + 1) % cfg.n_relations for r in routed for t in r.traces}
    assert all(r.loss == 1 for r in pipeline.record_forced_on(samples[:10], gold))


def test_missing_gold_is_a_contract_error(mre_world, mre_bundle):
    _, samples, _ = mre_world
    with pytest.raises(ContractError):
        SaverPipeline(mre_bundle, PipelineConfig(mode='mre')).record_forced_on(samples[:2], gold={})


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def test_selective_routing_beats_always_on():
    cfg = WorldConfig(n_samples=1200, p_misleading=0.4, seed=17)
    samples, truth = generate_world(cfg)
    bundle = synthetic_bundle(cfg)
    loss_on = {(t.sample_id, t.unit_id): t.loss_if_activated for t in truth}
    loss_off = {(t.sample_id, t.unit_id): t.loss_text_only for t in truth}
    calibration, test = samples[:600], samples[600:]

    records = SaverPipeline(bundle, PipelineConfig()).record_forced_on(calibration)
    result = calibrate_threshold(CalibrationInput(
        [r.score for r in records], [loss_on[(r.sample_id, r.unit_id)] for r in records], alpha=0.10, delta=0.05,
    ))
    assert result.feasible

    def outcome(config):
        routings = SaverPipeline(bundle, config).route_dataset(test)
        losses, active_losses = [], []
        for r in routings:
            for t in r.traces:
                key = (r.sample_id, t.unit_id)
                loss = loss_on[key] if t.gamma else loss_off[key]
                losses.append(loss)
                if t.gamma:
                    active_losses.append(loss)
        return np.mean(losses), active_losses, np.mean([r.cost for r in routings])

    risk, active, cost = outcome(PipelineConfig(tau=result.tau))
    risk_on, _, cost_on = outcome(PipelineConfig(gate_policy='always_on'))

    assert active and np.mean(active) <= 0.10
    assert risk_on >= risk
    assert cost_on > cost
    assert cost_on == always_on_cost(PipelineConfig().cost, 2)
