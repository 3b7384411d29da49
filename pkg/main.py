import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from colorama import Fore, Style, init

from ext.constants import EXIT_CONFIG_ERROR, LOG_DATE_FORMAT, LOG_DIR, LOG_FILE, LOG_FORMAT, MESSAGES, JudgeCalError
from utils.command_handler import CommandHandler
from utils.config import load_config

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False, log_dir=LOG_DIR, file_logging: bool = True):
    """Coloured stderr output plus a plain log file"""
    init()
    level = logging.DEBUG if verbose else logging.INFO

    terminal_formatter = logging.Formatter(
        f'{Fore.CYAN}%(asctime)s {Fore.WHITE}| '
        f'{Fore.GREEN}%(levelname)s {Fore.WHITE}| '
        f'{Fore.YELLOW}%(name)s {Fore.WHITE}| '
        f'{Fore.WHITE}%(message)s{Style.RESET_ALL}',
        datefmt=LOG_DATE_FORMAT,
    )
    terminal_handler = logging.StreamHandler(sys.stderr)
    terminal_handler.setFormatter(terminal_formatter)
    handlers = [terminal_handler]

    if file_logging:
        log_dir = Path(log_dir)
        log_dir.mkdir(exist_ok=True)
        file_handler = logging.FileHandler(log_dir / LOG_FILE, encoding='utf-8', mode='a')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT))
        handlers.append(file_handler)

    logging.basicConfig(level=level, handlers=handlers, force=True)
    # aiohttp access chatter stays at warnings unless debugging
    logging.getLogger('aiohttp').setLevel(logging.DEBUG if verbose else logging.WARNING)


async def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = load_config()
    except JudgeCalError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    handler = CommandHandler(settings)
    parser = handler.build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        print(MESSAGES['USAGE'], file=sys.stderr)
        return EXIT_CONFIG_ERROR

    log_settings = settings.get('logging', {})
    setup_logging(verbose=args.verbose, log_dir=log_settings.get('dir', LOG_DIR),
                  file_logging=log_settings.get('file', True))
    return await handler.handle_command(args)


if __name__ == '__main__':
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Interrupted; rerun with --resume to continue")
        sys.exit(130)
