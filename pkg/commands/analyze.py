import argparse
import logging
from typing import Dict

from ext.constants import EXIT_OK
from ext.report import ACROSS_CHOICES, write_analysis

NAME = 'analyze'
HELP = "Write slope_table.csv, curves.csv, group_comparison.csv and ecdf.csv for completed runs"

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('run_dirs', nargs='*', help="run directories or parents of run directories")
    parser.add_argument('--out', help="directory for the CSV files")
    parser.add_argument('--ci-across', dest='across', choices=ACROSS_CHOICES,
                        help="curve intervals over repetitions of a run or over datasets")
    parser.add_argument('--resamples', type=int, help="bootstrap resamples for the group comparison")
    parser.add_argument('--seed', type=int, help="bootstrap seed")


async def handle(args: argparse.Namespace, settings: Dict) -> int:
    defaults = settings.get('analysis', {})
    written = write_analysis(
        args.run_dirs,
        args.out or defaults.get('out_dir', 'analysis'),
        across=args.across or defaults.get('across', 'runs'),
        n_resamples=args.resamples or defaults.get('bootstrap_resamples', 10_000),
        seed=args.seed if args.seed is not None else defaults.get('seed', 0),
    )
    for path in written.values():
        print(path)
    return EXIT_OK
