"""
SAVER command line
Selective vision-evidence routing over precomputed embeddings.

Subcommands:
    synth     Generate a synthetic world with ground truth and matching weights
    record    Forced-on (score, loss) pairs for calibration
    calibrate Choose the activation threshold tau from (score, loss) pairs
    select    Image selection for a single unit
    route     Full pipeline: gate, select, aggregate, fuse, decode
    eval      Task metrics and risk-coverage curves for routed predictions
    cost      Cost-model table over gamma_bar and K
    fit-gate  Fit the standalone gate on truth labels

Exit codes: 0 success, 2 usage or contract/format errors, 1 anything else.
"""
import sys
from pathlib import Path

project_root = Path(__file__).parent.absolute()
sys.path.insert(0, str(project_root / 'src'))

import argparse
import json
import logging
import math
from dataclasses import asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from src import __version__
from bundle import ModelBundle
from calibration.clopper_pearson import min_activations_for_feasibility
from calibration.threshold_calibrator import (
    CalibrationInput,
    calibrate_threshold,
    calibration_split,
    load_calibration,
    read_score_file,
    threshold_sweep,
    write_score_file,
)
from config import DEFAULT_CONFIG_PATH, RunManifest, load_settings, write_artifact
from core import PipelineConfig, SaverPipeline
from errors import ContractError, UnitError
from evaluation.cost_model import CostConfig, always_on_cost, cost_sweep
from evaluation.selective_metrics import risk_coverage, selective_summary, write_curve
from evaluation.task_metrics import corpus_entity_counts, relation_counts
from gating.groundability_gate import fit_gate, save_gate_model
from storage.dataset import Sample, load_dataset
from synthetic.world_generator import UnitTruth, WorldConfig, generate_world, load_truth, synthetic_bundle, write_world

logger = logging.getLogger('saver')

EXIT_OK, EXIT_INTERNAL, EXIT_CONTRACT = 0, 1, 2

# flag dest -> settings key
_SETTING_FLAGS = {
    'mode': 'mode',
    'alpha': 'alpha',
    'delta': 'delta',
    'budget_k': 'budget_k',
    'k_regions': 'k_regions',
    'lambda_rel': 'lambda_rel',
    'lambda_cov': 'lambda_cov',
    'lambda_cons': 'lambda_cons',
    'lambda_gate': 'lambda_gate',
    'tau': 'tau',
    'seed': 'seed',
    'jobs': 'jobs',
    'selector': 'selector',
    'gate_policy': 'gate_policy',
}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _settings(args) -> Tuple[dict, Optional[Path]]:
    config_path = Path(args.config) if args.config else None
    if config_path is None and DEFAULT_CONFIG_PATH.is_file():
        config_path = DEFAULT_CONFIG_PATH
    overrides = {key: getattr(args, dest, None) for dest, key in _SETTING_FLAGS.items()}
    return load_settings(config_path, overrides), config_path


def _manifest(args, settings: dict, config_path: Optional[Path],
              inputs: Dict[str, object], outputs: Dict[str, object]) -> RunManifest:
    recorded = dict(settings)
    if recorded.get('tau') is not None and math.isinf(recorded['tau']):
        recorded['tau'] = None
    return RunManifest(
        subcommand=args.command,
        config_path=str(config_path) if config_path is not None else None,
        inputs={k: str(v) for k, v in inputs.items() if v is not None},
        outputs={k: str(v) for k, v in outputs.items() if v is not None},
        seed=int(settings['seed']),
        version=__version__,
        settings=recorded,
    )


def _load_bundle(args) -> ModelBundle:
    if not args.weights_dir:
        raise ContractError(f"{args.command} needs --weights-dir")
    return ModelBundle.load(args.weights_dir)


def _resolve_tau(args, settings: dict) -> float:
    if getattr(args, 'calibration', None):
        result = load_calibration(args.calibration)
        logger.info("Using tau=%s from %s", result.tau, args.calibration)
        return result.tau
    tau = settings.get('tau')
    if tau is None:
        if settings['gate_policy'] == 'calibrated':
            logger.warning("No --tau or --calibration given; vision will never activate")
        return math.inf
    return float(tau)


def _pipeline(args, settings: dict, tau: Optional[float] = None) -> SaverPipeline:
    bundle = _load_bundle(args)
    return SaverPipeline(bundle, PipelineConfig.from_settings(settings, tau))


def _truth_map(path) -> Dict[Tuple[str, str], UnitTruth]:
    return {(t.sample_id, t.unit_id): t for t in load_truth(path)}


def _parse_list(text: str, kind):
    try:
        return [kind(x) for x in text.split(',') if x.strip()]
    except ValueError as e:
        raise ContractError(f"Could not parse list {text!r}: {e}") from e


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ContractError(f"File not found: {path}")
    with open(path, 'r') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ContractError(f"{path}: invalid JSON: {e.msg}") from e


def _banner(title: str, lines: List[str]):
    print("=" * 80)
    print(title)
    print("=" * 80)
    for line in lines:
        print(line)
    print("=" * 80)
    print()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    settings, config_path = _settings(args)
    cfg = WorldConfig(
        n_samples=args.n_samples,
        images_min=args.images_min,
        images_max=args.images_max,
        dim=args.dim if args.dim is not None else int(settings['common_dim']),
        groundable_fraction=args.groundable_fraction,
        noise_scale=args.noise_scale,
        relevance_gap=args.relevance_gap,
        seed=int(settings['seed']),
        mode=settings['mode'],
        units_per_sample=args.units_per_sample,
    )
    out_dir = Path(args.out_dir)
    samples, truth = generate_world(cfg)
    write_world(samples, truth, out_dir)

    enc = settings['set_encoder']
    bundle = synthetic_bundle(cfg, heads=int(enc['heads']), ff_dim=int(enc['ff_dim']),
                              lambda_cons=float(settings['lambda_cons']),
                              lambda_gate=float(settings['lambda_gate']),
                              null_relation=settings['null_relation'])
    bundle.save(out_dir / 'weights')

    # paths relative to out_dir so reruns elsewhere produce identical files
    outputs = {'dataset': 'dataset.jsonl', 'matrices': 'matrices', 'truth': 'truth.jsonl',
               'weights': 'weights', 'world': 'world.json'}
    manifest = _manifest(args, settings, config_path, {}, outputs)
    n_groundable = sum(t.groundable for t in truth)
    write_artifact(out_dir / 'world.json', manifest, {
        'world': asdict(cfg),
        'n_samples': len(samples),
        'n_units': len(truth),
        'n_groundable': n_groundable,
    })

    _banner("SYNTHETIC WORLD", [
        f"Mode: {cfg.mode}",
        f"Samples: {len(samples)}",
        f"Units: {len(truth)} ({n_groundable} groundable)",
        f"Dim: {cfg.dim}",
        f"Seed: {cfg.seed}",
        f"Output: {out_dir}",
    ])
    return EXIT_OK


def cmd_record(args) -> int:
    settings, config_path = _settings(args)
    samples = load_dataset(args.dataset)
    pipeline = _pipeline(args, settings, tau=math.inf)
    jobs = int(settings['jobs'])

    held_out: List[str] = []
    if args.split:
        cal_idx, rest_idx = calibration_split(len(samples), float(settings['calibration_fraction']),
                                              int(settings['seed']))
        held_out = [samples[i].id for i in rest_idx]
        samples = [samples[i] for i in cal_idx]

    records = []
    if args.truth:
        truth = _truth_map(args.truth)
        for routing in pipeline.route_dataset(samples, jobs=jobs, force_on=True):
            for trace in routing.traces:
                key = (routing.sample_id, trace.unit_id)
                if key not in truth:
                    raise ContractError(f"No truth for sample {key[0]!r}, unit {key[1]!r}")
                records.append({'sample_id': key[0], 'unit_id': key[1], 'score': trace.g,
                                'loss': truth[key].loss_if_activated})
    else:
        for r in pipeline.record_forced_on(samples, jobs=jobs):
            records.append(asdict(r))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_score_file([r['score'] for r in records], [r['loss'] for r in records], out)
    artifact = out.with_suffix('.json')
    manifest = _manifest(args, settings, config_path,
                         {'dataset': args.dataset, 'truth': args.truth, 'weights': args.weights_dir},
                         {'scores': out, 'artifact': artifact})
    write_artifact(artifact, manifest, {
        'calibration_ids': sorted({r['sample_id'] for r in records}),
        'held_out_ids': held_out,
        'records': records,
    })

    n_loss = sum(r['loss'] for r in records)
    _banner("FORCED-ON RECORDING", [
        f"Samples: {len(samples)}" + (f" (calibration split, {len(held_out)} held out)" if args.split else ""),
        f"Units: {len(records)}",
        f"Forced-on errors: {n_loss}",
        f"Scores: {out}",
        f"Artifact: {artifact}",
    ])
    return EXIT_OK


def _calibration_pairs(path: Path) -> Tuple[List[float], List[int]]:
    if path.suffix == '.json':
        record = _read_json(path)
        if 'records' not in record:
            raise ContractError(f"{path}: no 'records' in artifact")
        return [float(r['score']) for r in record['records']], [int(r['loss']) for r in record['records']]
    if not path.is_file():
        raise ContractError(f"File not found: {path}")
    return read_score_file(path)


def cmd_calibrate(args) -> int:
    settings, config_path = _settings(args)
    scores, losses = _calibration_pairs(Path(args.scores))
    data = CalibrationInput(scores, losses, alpha=float(settings['alpha']), delta=float(settings['delta']))
    result = calibrate_threshold(data)

    manifest = _manifest(args, settings, config_path, {'scores': args.scores},
                         {'calibration': args.out, 'sweep': args.sweep})
    write_artifact(args.out, manifest, {'calibration': result.to_dict()})
    if args.sweep:
        threshold_sweep(data).to_csv(args.sweep, index=False, float_format='%.17g')

    lines = [
        f"Calibration units: {result.n_calibration}",
        f"alpha: {result.alpha}   delta: {result.delta}",
        f"Feasible: {result.feasible}",
        f"tau: {result.tau}",
        f"Activated: {result.n} ({result.k} errors), coverage {result.coverage:.3f}",
        f"Clopper-Pearson upper bound: {result.cp_upper:.4f}",
    ]
    if not result.feasible and data.alpha < 1.0:
        lines.append(f"Note: feasibility needs at least "
                     f"{min_activations_for_feasibility(data.alpha, data.delta)} error-free activations")
    lines.append(f"Saved to: {args.out}")
    _banner("THRESHOLD CALIBRATION", lines)
    return EXIT_OK


def _find_sample(samples: List[Sample], sample_id: str) -> Sample:
    for sample in samples:
        if sample.id == sample_id:
            return sample
    raise ContractError(f"No sample {sample_id!r} in dataset")


def cmd_select(args) -> int:
    settings, config_path = _settings(args)
    samples = load_dataset(args.dataset)
    pipeline = _pipeline(args, settings, tau=_resolve_tau(args, settings))
    record = pipeline.select_for_unit(_find_sample(samples, args.sample_id), args.unit_id)

    if args.out:
        manifest = _manifest(args, settings, config_path,
                             {'dataset': args.dataset, 'weights': args.weights_dir}, {'selection': args.out})
        write_artifact(args.out, manifest, {'selection': record})
        print(f"Selection saved to: {args.out}")
    else:
        print(json.dumps(record, indent=2))
    return EXIT_OK


def cmd_route(args) -> int:
    settings, config_path = _settings(args)
    samples = load_dataset(args.dataset)
    tau = _resolve_tau(args, settings)
    pipeline = _pipeline(args, settings, tau=tau)
    cfg = pipeline.config

    routings = pipeline.route_dataset(samples, jobs=int(settings['jobs']))

    n_units = sum(len(r.traces) for r in routings)
    n_active = sum(t.gamma for r in routings for t in r.traces)
    mean_gamma = float(np.mean([r.gamma_bar for r in routings])) if routings else 0.0
    mean_cost = float(np.mean([r.cost for r in routings])) if routings else 0.0
    summary = {
        'n_samples': len(routings),
        'n_units': n_units,
        'n_activated': n_active,
        'unit_gamma_bar': n_active / n_units if n_units else 0.0,
        'mean_gamma_bar': mean_gamma,
        'mean_cost': mean_cost,
        'always_on_cost': always_on_cost(cfg.cost, cfg.budget_k),
        'region_reads': sum(r.region_reads for r in routings),
        'tau': None if math.isinf(tau) else tau,
    }
    manifest = _manifest(args, settings, config_path,
                         {'dataset': args.dataset, 'weights': args.weights_dir,
                          'calibration': args.calibration},
                         {'predictions': args.out})
    write_artifact(args.out, manifest, {
        'summary': summary,
        'predictions': [r.to_dict() for r in routings],
    })

    _banner("SELECTIVE VISION ROUTING", [
        f"Mode: {cfg.mode}   gate policy: {cfg.gate_policy}   selector: {cfg.selector}",
        f"tau: {tau}",
        f"Samples: {len(routings)}   units: {n_units}",
        f"Activated: {n_active} ({100 * summary['unit_gamma_bar']:.1f}%)",
        f"Mean cost: {mean_cost:.2f} (always-on {summary['always_on_cost']:.2f})",
        f"Region reads: {summary['region_reads']}",
        f"Predictions saved to: {args.out}",
    ])
    return EXIT_OK


def _unit_loss(kind: str, decision, gold) -> int:
    if kind == 'pair':
        return int(decision != gold)
    return int((decision is None) != (gold is None) or (gold is not None and decision != gold))


def cmd_eval(args) -> int:
    settings, config_path = _settings(args)
    samples = {s.id: s for s in load_dataset(args.dataset)}
    record = _read_json(args.predictions)
    predictions = record.get('predictions')
    if predictions is None:
        raise ContractError(f"{args.predictions}: no 'predictions' in artifact")
    truth = _truth_map(args.truth) if args.truth else None
    null_relation = settings['null_relation']

    entity_pairs, rel_preds, rel_golds = [], [], []
    scores, losses = [], []
    for pred in predictions:
        sample = samples.get(pred['sample_id'])
        if sample is None:
            raise ContractError(f"Prediction for unknown sample {pred['sample_id']!r}")
        listed = {u.unit_id: u for u in sample.units}

        if pred['mode'] == 'mner':
            predicted = [(e['a'], e['b'], e['type']) for e in pred['entities']]
            gold = [(u.span[0], u.span[1], u.gold) for u in sample.units
                    if not u.is_pair and u.gold is not None]
            entity_pairs.append((predicted, gold))
        else:
            for unit_id, relation in pred['relations'].items():
                if unit_id not in listed:
                    raise ContractError(f"Prediction for unknown unit {unit_id!r} of {sample.id!r}")
                rel_preds.append(int(relation))
                rel_golds.append(listed[unit_id].gold)

        for trace in pred['traces']:
            key = (sample.id, trace['unit_id'])
            if truth is not None:
                if key not in truth:
                    raise ContractError(f"No truth for sample {key[0]!r}, unit {key[1]!r}")
                t = truth[key]
                loss = t.loss_if_activated if trace['gamma'] else t.loss_text_only
            else:
                unit = listed.get(trace['unit_id'])
                loss = _unit_loss(trace['kind'], trace['decision'], unit.gold if unit is not None else None)
            scores.append(trace['g'] if args.score_source == 'gate' else trace['confidence'])
            losses.append(loss)

    metrics = {'n_samples': len(predictions), 'score_source': args.score_source}
    if entity_pairs:
        metrics['entity'] = corpus_entity_counts(entity_pairs).to_dict()
    if rel_preds:
        metrics['relation'] = relation_counts(rel_preds, rel_golds, null_relation).to_dict()
    if scores:
        metrics['selective'] = selective_summary(scores, losses, float(settings['alpha']))
        if args.curve_out:
            write_curve(risk_coverage(scores, losses), args.curve_out)

    manifest = _manifest(args, settings, config_path,
                         {'dataset': args.dataset, 'predictions': args.predictions, 'truth': args.truth},
                         {'metrics': args.out, 'curve': args.curve_out})
    if args.out:
        write_artifact(args.out, manifest, {'metrics': metrics})

    lines = []
    if 'entity' in metrics:
        e = metrics['entity']
        lines.append(f"Entity  P {e['precision']:.4f}  R {e['recall']:.4f}  F1 {e['f1']:.4f}")
    if 'relation' in metrics:
        r = metrics['relation']
        lines.append(f"Relation  P {r['precision']:.4f}  R {r['recall']:.4f}  F1 {r['f1']:.4f}")
    if 'selective' in metrics:
        s = metrics['selective']
        lines.append(f"Units: {s['n_units']}   AURC {s['aurc']:.4f}   "
                     f"ActCov@{s['alpha']}: {s['act_cov']:.4f}")
    if args.out:
        lines.append(f"Metrics saved to: {args.out}")
    _banner("EVALUATION", lines)
    return EXIT_OK


def cmd_cost(args) -> int:
    settings, config_path = _settings(args)
    cfg = CostConfig(**settings['cost'])
    ks = _parse_list(args.ks, int) if args.ks else [int(settings['budget_k'])]
    table = cost_sweep(cfg, _parse_list(args.gamma_bars, float), ks)
    if args.out:
        table.to_csv(args.out, index=False, float_format='%.17g')
    print(table.to_string(index=False))
    if args.out:
        print(f"\nTable saved to: {args.out}")
    return EXIT_OK


def cmd_fit_gate(args) -> int:
    settings, config_path = _settings(args)
    samples = load_dataset(args.dataset)
    truth = _truth_map(args.truth)
    pipeline = _pipeline(args, settings, tau=math.inf)

    examples = []
    for sample in samples:
        globals_ = sample.global_matrix()
        cache: Dict = {}
        for unit in sample.units:
            key = (sample.id, unit.unit_id)
            if key not in truth:
                raise ContractError(f"No truth for sample {key[0]!r}, unit {key[1]!r}")
            label = int(truth[key].groundable)
            for span in unit.spans():
                state = pipeline.entity_state(sample, span, globals_, cache)
                examples.append((state.h, state.feats, label))

    result = fit_gate(examples, l2=args.l2, steps=args.steps, seed=int(settings['seed']))
    out = Path(args.out) if args.out else Path(args.weights_dir) / 'gate.json'
    save_gate_model(result.model, out)

    lines = [
        f"Examples: {len(examples)}",
        f"Converged: {result.converged}",
    ]
    if result.loss_history:
        lines.append(f"Loss: {result.loss_history[0]:.6f} -> {result.loss_history[-1]:.6f}")
    if result.warning:
        lines.append(f"WARNING: {result.warning}")
    lines.append(f"Gate saved to: {out}")
    _banner("GATE FIT", lines)
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'record': cmd_record,
    'calibrate': cmd_calibrate,
    'select': cmd_select,
    'route': cmd_route,
    'eval': cmd_eval,
    'cost': cmd_cost,
    'fit-gate': cmd_fit_gate,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON settings file (default: models/saver/model_config.json)')
    common.add_argument('--weights-dir', type=str, help='Model bundle directory')
    common.add_argument('--mode', choices=['mner', 'mre'], help='Task mode')
    common.add_argument('--alpha', type=float, help='Target activated risk')
    common.add_argument('--delta', type=float, help='Calibration failure probability')
    common.add_argument('--budget-k', type=int, help='Images selected per activated unit')
    common.add_argument('--k-regions', type=int, help='Regions kept per selected image')
    common.add_argument('--lambda-rel', type=float, help='Relevance weight of the selection objective')
    common.add_argument('--lambda-cov', type=float, help='Coverage weight of the selection objective')
    common.add_argument('--lambda-cons', type=float, help='Weight of the consistency energy')
    common.add_argument('--lambda-gate', type=float, help='Weight of the activation penalty')
    common.add_argument('--tau', type=float, help='Activation threshold (inf never activates)')
    common.add_argument('--seed', type=int, help='Seed for every random draw')
    common.add_argument('--jobs', type=int, help='Parallel workers over samples')
    common.add_argument('-v', '--verbose', action='count', default=0, help='-v info, -vv debug')
    common.add_argument('-q', '--quiet', action='store_true', help='Only log errors')

    parser = argparse.ArgumentParser(
        prog='saver.py',
        description='Selective vision-evidence routing for multimodal information extraction',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('synth', parents=[common], help='Generate a synthetic world')
    p.add_argument('--out-dir', required=True, help='Output directory')
    p.add_argument('--n-samples', type=int, default=200)
    p.add_argument('--images-min', type=int, default=2)
    p.add_argument('--images-max', type=int, default=4)
    p.add_argument('--dim', type=int, help='Embedding dim (default: common_dim setting)')
    p.add_argument('--groundable-fraction', type=float, default=0.5)
    p.add_argument('--noise-scale', type=float, default=0.3)
    p.add_argument('--relevance-gap', type=float, default=0.5)
    p.add_argument('--units-per-sample', type=int, default=2)

    p = sub.add_parser('record', parents=[common], help='Record forced-on (score, loss) pairs')
    p.add_argument('dataset', help='Dataset JSONL')
    p.add_argument('--out', required=True, help='Two-column score CSV (a .json artifact is written next to it)')
    p.add_argument('--truth', help='Truth sidecar; losses come from it instead of decoded predictions')
    p.add_argument('--split', action='store_true', help='Record only the calibration split of the samples')

    p = sub.add_parser('calibrate', parents=[common], help='Calibrate the activation threshold')
    p.add_argument('scores', help='Score CSV (score, loss) or record artifact JSON')
    p.add_argument('--out', required=True, help='Calibration JSON')
    p.add_argument('--sweep', help='Optional CSV with every candidate threshold')

    p = sub.add_parser('select', parents=[common], help='Image selection for one unit')
    p.add_argument('dataset', help='Dataset JSONL')
    p.add_argument('--sample-id', required=True)
    p.add_argument('--unit-id', required=True)
    p.add_argument('--calibration', help='Calibration JSON providing tau')
    p.add_argument('--selector', choices=['sis', 'topk', 'all'])
    p.add_argument('--out', help='Selection JSON (default: print)')

    p = sub.add_parser('route', parents=[common], help='Route a dataset through the pipeline')
    p.add_argument('dataset', help='Dataset JSONL')
    p.add_argument('--out', required=True, help='Predictions JSON')
    p.add_argument('--calibration', help='Calibration JSON providing tau')
    p.add_argument('--selector', choices=['sis', 'topk', 'all'])
    p.add_argument('--gate-policy', choices=['calibrated', 'always_on', 'text_only'])

    p = sub.add_parser('eval', parents=[common], help='Metrics for routed predictions')
    p.add_argument('dataset', help='Dataset JSONL with gold labels')
    p.add_argument('--predictions', required=True, help='Predictions JSON from route')
    p.add_argument('--truth', help='Truth sidecar; unit losses come from it')
    p.add_argument('--score-source', choices=['gate', 'confidence'], default='gate')
    p.add_argument('--out', help='Metrics JSON')
    p.add_argument('--curve-out', help='Risk-coverage CSV (coverage, risk)')

    p = sub.add_parser('cost', parents=[common], help='Cost-model sweep')
    p.add_argument('--gamma-bars', default='0,0.25,0.5,0.75,1', help='Comma-separated activation rates')
    p.add_argument('--ks', help='Comma-separated budgets (default: --budget-k)')
    p.add_argument('--out', help='CSV table')

    p = sub.add_parser('fit-gate', parents=[common], help='Fit the gate on truth labels')
    p.add_argument('dataset', help='Dataset JSONL')
    p.add_argument('--truth', required=True, help='Truth sidecar with groundable flags')
    p.add_argument('--l2', type=float, default=1e-3)
    p.add_argument('--steps', type=int, default=200)
    p.add_argument('--out', help='Gate JSON (default: <weights-dir>/gate.json)')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help and --version exit 0; usage errors exit 2
        return int(e.code) if isinstance(e.code, int) else EXIT_CONTRACT

    if args.quiet:
        level = logging.ERROR
    else:
        level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format='%(levelname)s %(name)s: %(message)s',
    )

    try:
        return COMMANDS[args.command](args)
    except ContractError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except UnitError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONTRACT if isinstance(e.cause, ContractError) else EXIT_INTERNAL
    except FileNotFoundError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except Exception as e:
        logger.exception("Internal error")
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == '__main__':
    sys.exit(main())
