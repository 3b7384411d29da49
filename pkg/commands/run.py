import argparse
import copy
import logging
from pathlib import Path
from typing import Dict, List

from ext.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_PARTIAL_RUN,
    MESSAGES,
    SEVERITY_PRESETS,
    ConfigError,
    DatasetError,
    NoiseKind,
    PartialRun,
)
from ext.dataset import DatasetManifest
from ext.judge import JudgeSpec
from ext.protocol import RunConfig, resume, run_calibration
from utils.config import load_run_file

NAME = 'run'
HELP = "Run the baseline and the noise schedule for one or more datasets"

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help="run config file (JSON or TOML)")
    parser.add_argument('--dataset', action='append', help="dataset manifest; repeat for a sequential batch")
    parser.add_argument('--noise', action='append',
                        help=f"noise kind(s): {', '.join(NoiseKind.values())}; comma-separated or repeated")
    parser.add_argument('--schedule', help="comma-separated levels (dB or severities) or a severity preset")
    parser.add_argument('--reps', type=int, help="repetitions per level")
    parser.add_argument('--judge', help="remote:MODEL, sim:scripted:base=..,slope=..,jitter=..,seed=.. or sim:centroid")
    parser.add_argument('--alpha', type=float, help="significance level of the slope test")
    parser.add_argument('--seed', type=int, help="master seed")
    parser.add_argument('--n-context', type=int, dest='n_context', help="few-shot examples per prompt")
    parser.add_argument('--batch-size', type=int, dest='batch_size', help="evaluation rows per judge call")
    parser.add_argument('--perturb', choices=['test', 'train'], help="split that receives the noise")
    parser.add_argument('--baseline-reps', type=int, dest='baseline_reps', help="clean-baseline repetitions")
    parser.add_argument('--out', help="run directory (parent directory for a batch)")
    parser.add_argument('--resume', metavar='RUN_DIR', help="continue an interrupted run from its stored config")


def _deep_update(base: Dict, updates: Dict) -> Dict:
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _parse_schedule(text: str) -> Dict:
    if text in SEVERITY_PRESETS:
        return {'severity_preset': text}
    try:
        return {'schedule': [float(v) for v in text.split(',') if v.strip()]}
    except ValueError:
        raise ConfigError(f"Cannot parse schedule {text!r}")


def build_run_settings(args: argparse.Namespace, settings: Dict) -> Dict:
    """Defaults from config.json, then the --config file, then inline flags"""
    merged = copy.deepcopy(settings.get('run', {}))
    merged['judge'] = copy.deepcopy(settings.get('judge', {}))
    if getattr(args, 'config', None):
        _deep_update(merged, load_run_file(args.config))

    noise = merged.setdefault('noise', {})
    if args.noise:
        kinds = [k.strip() for item in args.noise for k in item.split(',') if k.strip()]
        noise['kinds'] = kinds
        noise.pop('kind', None)
    if args.schedule:
        noise.update(_parse_schedule(args.schedule))

    flags = {
        'repetitions': args.reps,
        'alpha_level': args.alpha,
        'master_seed': args.seed,
        'n_context': args.n_context,
        'batch_size': args.batch_size,
        'perturb': args.perturb,
        'baseline_reps': args.baseline_reps,
    }
    merged.update({k: v for k, v in flags.items() if v is not None})
    if args.judge:
        merged['judge'] = JudgeSpec.from_cli(args.judge, defaults=settings.get('judge', {}))
    return merged


def _targets(args: argparse.Namespace, merged: Dict) -> List[Dict]:
    """One run config per manifest; a batch writes to ``root/<dataset_id>``"""
    datasets = args.dataset or ([merged['dataset']] if merged.get('dataset') else [])
    if not datasets:
        raise ConfigError(MESSAGES['MISSING_FIELD'].format(field='dataset'))
    root = Path(args.out or merged.get('output_dir') or 'runs')
    if args.out and len(datasets) == 1:
        return [dict(merged, dataset=datasets[0], output_dir=str(root))]

    targets = []
    seen: Dict[str, str] = {}
    for dataset in datasets:
        dataset_id = DatasetManifest.load(dataset).dataset_id
        if dataset_id in seen:
            raise ConfigError(f"Manifests {seen[dataset_id]} and {dataset} share the id {dataset_id!r}")
        seen[dataset_id] = dataset
        targets.append(dict(merged, dataset=dataset, output_dir=str(root / dataset_id)))
    return targets


async def handle(args: argparse.Namespace, settings: Dict) -> int:
    if args.resume:
        verdict = await resume(args.resume)
        print(f"{verdict.dataset_id}: {verdict.combined.value}")
        print(MESSAGES['VERDICT_WRITTEN'].format(path=Path(args.resume) / 'verdict.json'))
        return EXIT_OK

    configs = [RunConfig.from_dict(target) for target in _targets(args, build_run_settings(args, settings))]
    exit_code = EXIT_OK
    for config in configs:
        logger.info(f"Starting {config.dataset} -> {config.output_dir}")
        try:
            verdict = await run_calibration(config)
        except PartialRun as e:
            logger.warning(f"{config.dataset}: {e}")
            if e.verdict is not None:
                print(f"{e.verdict.dataset_id}: {e.verdict.combined.value} (partial)")
            exit_code = max(exit_code, EXIT_PARTIAL_RUN)
            continue
        except (ConfigError, DatasetError):
            if len(configs) == 1:
                raise
            logger.exception(f"{config.dataset}: configuration error")
            exit_code = max(exit_code, EXIT_CONFIG_ERROR)
            continue
        print(f"{verdict.dataset_id}: {verdict.combined.value}")
        print(MESSAGES['VERDICT_WRITTEN'].format(path=Path(config.output_dir) / 'verdict.json'))
    return exit_code
