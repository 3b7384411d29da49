import argparse
import importlib
import logging
import time
from datetime import datetime, timezone
from types import ModuleType
from typing import Dict, List, Optional

from ext.cache_manager import CacheManager
from ext.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_PARTIAL_RUN,
    MESSAGES,
    AuthError,
    ConfigError,
    ConfigMismatch,
    DatasetError,
    JudgeCalError,
    NoRunsFound,
    PartialRun,
)

logger = logging.getLogger(__name__)

# Loaded in this order; each module exposes NAME, HELP, add_arguments() and handle()
COMMAND_MODULES = [
    'commands.run',
    'commands.analyze',
    'commands.report',
    'commands.compare',
]


class CommandAnalytics:
    """Per-command usage and error history for the current process"""

    def __init__(self):
        self.cache_manager = CacheManager()

    def track_command(self, command: str, duration: float, exit_code: int) -> None:
        cache_key = f"analytics:command:{command}"
        stats = self.cache_manager.get(cache_key) or {'total_uses': 0, 'total_seconds': 0.0, 'exit_codes': {}}
        stats['total_uses'] += 1
        stats['total_seconds'] += duration
        stats['exit_codes'][exit_code] = stats['exit_codes'].get(exit_code, 0) + 1
        stats['last_used'] = datetime.now(timezone.utc).isoformat()
        self.cache_manager.set(cache_key, stats)

    def track_error(self, command: str, error: Exception) -> None:
        cache_key = f"analytics:errors:{command}"
        errors = self.cache_manager.get(cache_key) or []
        errors.append({
            'time': datetime.now(timezone.utc).isoformat(),
            'error': str(error),
            'type': type(error).__name__,
        })
        # Keep only the last 100 errors
        self.cache_manager.set(cache_key, errors[-100:])


class CommandHandler:
    """Loads the subcommand modules and turns their outcome into an exit code"""

    def __init__(self, settings: Dict, modules: Optional[List[str]] = None):
        self.settings = settings
        self.analytics = CommandAnalytics()
        self.commands: Dict[str, ModuleType] = {}
        for name in modules or COMMAND_MODULES:
            try:
                module = importlib.import_module(name)
                self.commands[module.NAME] = module
                logger.debug(f"Loaded command module: {name}")
            except (ImportError, AttributeError) as e:
                logger.error(f"Failed to load {name}: {e}")

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog='judgecal', description="Noise-response calibration for LLM judges")
        parser.add_argument('--verbose', '-v', action='store_true', help="debug logging")
        subparsers = parser.add_subparsers(dest='command')
        for name, module in self.commands.items():
            sub = subparsers.add_parser(name, help=module.HELP)
            sub.add_argument('--verbose', '-v', action='store_true', default=argparse.SUPPRESS, help="debug logging")
            module.add_arguments(sub)
        return parser

    def exit_code_for(self, error: Exception) -> int:
        if isinstance(error, PartialRun):
            return EXIT_PARTIAL_RUN
        return EXIT_CONFIG_ERROR

    def error_message(self, error: Exception) -> str:
        if isinstance(error, PartialRun):
            if error.verdict is not None:
                return f"{error} (verdict computed from the trials present)"
            return f"{error}; too few trials for a verdict, rerun to resume"
        if isinstance(error, ConfigMismatch):
            return f"❌ Run directory belongs to a different configuration: {error}"
        if isinstance(error, (ConfigError, DatasetError, NoRunsFound)):
            return str(error) if str(error).startswith('❌') else f"❌ {error}"
        if isinstance(error, AuthError):
            return f"🔒 Judge authentication failed: {error}"
        return f"❌ {type(error).__name__}: {error}"

    async def handle_command(self, args: argparse.Namespace) -> int:
        """Run one subcommand with timing, analytics and error mapping"""
        command_name = getattr(args, 'command', None)
        module = self.commands.get(command_name)
        if module is None:
            logger.error(MESSAGES['USAGE'])
            return EXIT_CONFIG_ERROR

        started = time.monotonic()
        try:
            exit_code = await module.handle(args, self.settings)
        except JudgeCalError as e:
            self.analytics.track_error(command_name, e)
            exit_code = self.exit_code_for(e)
            log = logger.warning if exit_code == EXIT_PARTIAL_RUN else logger.error
            log(self.error_message(e))
        duration = time.monotonic() - started
        self.analytics.track_command(command_name, duration, exit_code)
        logger.info(f"{command_name} finished in {duration:.1f}s with exit code {exit_code}")
        return exit_code if exit_code is not None else EXIT_OK
