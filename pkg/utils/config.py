import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict

from ext.constants import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / 'config.json'


# Scalar settings converted to their expected type when present and not null
COERCED_KEYS = {
    ('run', 'repetitions'): int,
    ('run', 'n_context'): int,
    ('run', 'feature_cap'): int,
    ('run', 'batch_size'): int,
    ('run', 'alpha_level'): float,
    ('run', 'master_seed'): int,
    ('run', 'split_seed'): int,
    ('run', 'min_rows'): int,
    ('run', 'baseline_reps'): int,
    ('judge', 'temperature'): float,
    ('judge', 'timeout'): (int, float),
    ('judge', 'max_in_flight'): int,
    ('judge', 'transport_retries'): int,
    ('judge', 'backoff_start'): float,
    ('judge', 'backoff_factor'): float,
    ('judge', 'char_budget'): int,
    ('analysis', 'bootstrap_resamples'): int,
    ('analysis', 'seed'): int,
}


def load_config(path=DEFAULT_CONFIG_PATH) -> Dict:
    """Load the harness defaults, validate the section types and coerce scalar settings"""
    required_keys = {
        'run': dict,
        'judge': dict,
        'analysis': dict,
        'logging': dict,
    }

    try:
        with open(path, 'r', encoding='utf-8') as config_file:
            config = json.load(config_file)

        for key, expected_type in required_keys.items():
            if key not in config:
                raise KeyError(f"Missing required key: {key}")
            if not isinstance(config[key], expected_type):
                raise ValueError(f"{key} must be a {expected_type.__name__}")

        for (section, key), expected_type in COERCED_KEYS.items():
            value = config[section].get(key)
            if value is None:
                continue
            allowed = expected_type if isinstance(expected_type, tuple) else (expected_type,)
            if isinstance(value, bool) or not isinstance(value, allowed):
                try:
                    config[section][key] = allowed[0](value)
                except (TypeError, ValueError):
                    raise ValueError(f"{section}.{key} must be {allowed[0].__name__}, got {value!r}")

        return config

    except FileNotFoundError:
        logger.error(f"{path} not found!")
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        logger.error(f"{path} is not valid JSON!")
        raise ConfigError(f"Invalid JSON in {path}: {e}")
    except (KeyError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        raise ConfigError(str(e))


def load_run_file(path) -> Dict:
    """
    A run config in JSON or TOML (picked by extension, .toml for TOML)

    The file holds run keys at top level; a ``judge`` table/object is allowed.
    """
    path = Path(path)
    try:
        if path.suffix.lower() == '.toml':
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot parse {path}: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at top level")
    # A full defaults-style file nests run keys under "run"
    if isinstance(data.get('run'), dict):
        run = dict(data['run'])
        if 'judge' in data:
            run['judge'] = data['judge']
        data = run
    return data
