import argparse
import json
import logging
from pathlib import Path
from typing import Dict

from ext.constants import EXIT_OK, ConfigError, Decision
from ext.protocol import compare_groups
from ext.report import ECDF_FILE, GROUP_COMPARISON_FILE, ecdf_frame, group_comparison_frame

NAME = 'compare-groups'
HELP = "Compare clean-baseline performance of sensitive and insensitive datasets"

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('run_dirs', nargs='+', help="run directories or parents of run directories")
    parser.add_argument('--labels', help="JSON file mapping dataset_id to sensitive/insensitive")
    parser.add_argument('--out', help="directory for group_comparison.csv and ecdf.csv")
    parser.add_argument('--resamples', type=int, help="bootstrap resamples")
    parser.add_argument('--seed', type=int, help="bootstrap seed")


def load_labels(path) -> Dict[str, Decision]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
        return {str(k): Decision(v) for k, v in raw.items()}
    except FileNotFoundError:
        raise ConfigError(f"Labels file not found: {path}")
    except (json.JSONDecodeError, AttributeError, ValueError) as e:
        raise ConfigError(f"Invalid labels file {path}: {e}")


async def handle(args: argparse.Namespace, settings: Dict) -> int:
    defaults = settings.get('analysis', {})
    comparison = compare_groups(
        args.run_dirs,
        labels=load_labels(args.labels) if args.labels else None,
        n_resamples=args.resamples or defaults.get('bootstrap_resamples', 10_000),
        seed=args.seed if args.seed is not None else defaults.get('seed', 0),
    )
    table = group_comparison_frame(comparison)
    print(f"Sensitive datasets: {comparison.n_sensitive}, insensitive datasets: {comparison.n_insensitive}")
    print(table.to_string(index=False))

    out = Path(args.out or defaults.get('out_dir', 'analysis'))
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / GROUP_COMPARISON_FILE, index=False, lineterminator='\n')
    ecdf_frame(comparison).to_csv(out / ECDF_FILE, index=False, lineterminator='\n')
    logger.info(f"Wrote {out / GROUP_COMPARISON_FILE} and {out / ECDF_FILE}")
    return EXIT_OK
