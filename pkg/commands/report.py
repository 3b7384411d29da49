import argparse
import sys
from typing import Dict

from ext.constants import EXIT_CONFIG_ERROR, EXIT_OK, MESSAGES
from ext.report import load_completed_runs, summary_lines

NAME = 'report'
HELP = "Print verdicts and sensitive fractions for completed runs"


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('run_dirs', nargs='*', help="run directories or parents of run directories")
    parser.add_argument('--by', metavar='TAG', help="break the fractions down by a manifest tag")


async def handle(args: argparse.Namespace, settings: Dict) -> int:
    if not args.run_dirs:
        print(MESSAGES['USAGE'], file=sys.stderr)
        return EXIT_CONFIG_ERROR
    for line in summary_lines(load_completed_runs(args.run_dirs), by_tag=args.by):
        print(line)
    return EXIT_OK
