import filecmp
import json

import pandas as pd
import pytest

from calibration.threshold_calibrator import load_calibration
from gating.groundability_gate import load_gate_model
from storage.dataset import load_dataset

from saver import main


@pytest.fixture(scope='module')
def world(tmp_path_factory):
    """Synthetic world plus weights written by the synth subcommand"""
    out = tmp_path_factory.mktemp('cli') / 'world'
    assert main(['synth', '--out-dir', str(out), '--n-samples', '80', '--dim', '8', '--seed', '7']) == 0
    return out


def _weights(world):
    return ['--weights-dir', str(world / 'weights')]


def _read(path):
    with open(path) as f:
        return json.load(f)


def test_synth_twice_gives_identical_files(tmp_path, world):
    again = tmp_path / 'again'
    assert main(['synth', '--out-dir', str(again), '--n-samples', '80', '--dim', '8', '--seed', '7']) == 0
    for name in ('dataset.jsonl', 'truth.jsonl', 'world.json'):
        assert filecmp.cmp(world / name, again / name, shallow=False), name
    weights = sorted(p.name for p in (world / 'weights').iterdir())
    _, mismatch, errors = filecmp.cmpfiles(world / 'weights', again / 'weights', weights, shallow=False)
    assert not mismatch and not errors

    manifest = _read(world / 'world.json')['manifest']
    assert manifest['subcommand'] == 'synth'
    assert manifest['seed'] == 7
    assert manifest['outputs']['dataset'] == 'dataset.jsonl'


def test_record_calibrate_route_eval(tmp_path, world):
    dataset = str(world / 'dataset.jsonl')
    scores = tmp_path / 'scores.csv'
    assert main(['record', dataset, *_weights(world), '--truth', str(world / 'truth.jsonl'),
                 '--out', str(scores)]) == 0
    frame = pd.read_csv(scores)
    assert list(frame.columns) == ['score', 'loss']
    assert len(frame) == 160
    assert len(_read(tmp_path / 'scores.json')['records']) == 160

    calibration = tmp_path / 'cal.json'
    sweep = tmp_path / 'sweep.csv'
    assert main(['calibrate', str(scores), '--alpha', '0.10', '--delta', '0.05',
                 '--out', str(calibration), '--sweep', str(sweep)]) == 0
    record = _read(calibration)['calibration']
    assert record['alpha'] == 0.10 and record['delta'] == 0.05
    assert record['n_calibration'] == 160
    assert load_calibration(calibration).n_calibration == 160
    assert sweep.is_file()

    predictions = tmp_path / 'pred.json'
    assert main(['route', dataset, *_weights(world), '--calibration', str(calibration),
                 '--out', str(predictions)]) == 0
    routed = _read(predictions)
    assert routed['summary']['n_samples'] == 80
    assert routed['summary']['n_units'] == 160
    assert routed['summary']['mean_cost'] <= routed['summary']['always_on_cost']
    assert len(routed['predictions']) == 80

    metrics, curve = tmp_path / 'metrics.json', tmp_path / 'curve.csv'
    assert main(['eval', dataset, '--predictions', str(predictions), '--truth', str(world / 'truth.jsonl'),
                 '--out', str(metrics), '--curve-out', str(curve)]) == 0
    result = _read(metrics)['metrics']
    assert set(result) >= {'entity', 'selective'}
    assert result['selective']['n_units'] == 160
    assert len(pd.read_csv(curve)) == 160


def test_route_with_infinite_tau_reads_no_regions(tmp_path, world):
    out = tmp_path / 'pred.json'
    assert main(['route', str(world / 'dataset.jsonl'), *_weights(world), '--tau', 'inf', '--out', str(out)]) == 0
    summary = _read(out)['summary']
    assert summary['region_reads'] == 0
    assert summary['n_activated'] == 0
    assert summary['mean_cost'] == 20.0
    assert summary['tau'] is None


def test_eval_on_gold_predictions(tmp_path, world):
    samples = load_dataset(world / 'dataset.jsonl')
    predictions = []
    for s in samples:
        predictions.append({
            'sample_id': s.id,
            'mode': 'mner',
            'entities': [{'a': u.span[0], 'b': u.span[1], 'type': u.gold} for u in s.units if u.gold is not None],
            'traces': [{'unit_id': u.unit_id, 'kind': 'span', 'g': 0.5, 'gamma': 0,
                        'decision': u.gold, 'confidence': 1.0} for u in s.units],
        })
    gold_path = tmp_path / 'gold.json'
    gold_path.write_text(json.dumps({'predictions': predictions}))

    out = tmp_path / 'metrics.json'
    assert main(['eval', str(world / 'dataset.jsonl'), '--predictions', str(gold_path), '--out', str(out)]) == 0
    metrics = _read(out)['metrics']
    assert metrics['entity']['f1'] == 1.0
    assert metrics['selective']['aurc'] == 0.0


def test_select_prints_json(capsys, world):
    code = main(['select', str(world / 'dataset.jsonl'), *_weights(world),
                 '--sample-id', 's000000', '--unit-id', 'u0', '--budget-k', '1'])
    assert code == 0
    record = json.loads(capsys.readouterr().out)
    assert record['unit_id'] == 'u0'
    assert len(record['chosen']) == 1


def test_cost_table(tmp_path, capsys):
    out = tmp_path / 'cost.csv'
    assert main(['cost', '--gamma-bars', '0,1', '--ks', '2', '--out', str(out)]) == 0
    table = pd.read_csv(out)
    assert table['cost'].tolist() == [20.0, 60.0]
    assert 'always_on_cost' in capsys.readouterr().out


def test_fit_gate(tmp_path, world):
    out = tmp_path / 'gate.json'
    assert main(['fit-gate', str(world / 'dataset.jsonl'), *_weights(world), '--truth', str(world / 'truth.jsonl'),
                 '--steps', '50', '--out', str(out)]) == 0
    assert load_gate_model(out).dim == 8


def test_usage_and_contract_errors(tmp_path, world):
    assert main(['route', '--bogus']) == 2
    assert main([]) == 2
    assert main(['calibrate', str(tmp_path / 'missing.csv'), '--out', str(tmp_path / 'cal.json')]) == 2
    assert main(['route', str(world / 'dataset.jsonl'), '--out', str(tmp_path / 'p.json')]) == 2
    assert main(['cost', '--gamma-bars', '0,x']) == 2
    assert main(['cost', '--gamma-bars', '1.5']) == 2

    bad = tmp_path / 'bad.jsonl'
    bad.write_text(json.dumps({'id': 's0', 'tokens': [[1.0] * 8], 'units': 5}) + '\n')
    assert main(['route', str(bad), *_weights(world), '--out', str(tmp_path / 'p.json')]) == 2
    bad.write_bytes(b'\xff\n')
    assert main(['route', str(bad), *_weights(world), '--out', str(tmp_path / 'p.json')]) == 2


def test_version(capsys):
    assert main(['--version']) == 0
    assert '1.0.0' in capsys.readouterr().out
