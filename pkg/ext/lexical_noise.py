import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    DEFAULT_MASK_TOKEN,
    DEFAULT_OP_WEIGHTS,
    DEFAULT_P_MAX,
    QWERTY_ROWS,
    SEVERITY_PRESETS,
    ConfigError,
)

logger = logging.getLogger(__name__)

OPERATIONS = ('dropout_mask', 'adjacent_swap', 'keyboard_typo', 'insert', 'delete')
LOWERCASE = string.ascii_lowercase


def qwerty_neighbors() -> Dict[str, str]:
    """Row neighbours (left/right) plus the touching keys on the rows above and below"""
    neighbors: Dict[str, str] = {}
    for r, row in enumerate(QWERTY_ROWS):
        for c, char in enumerate(row):
            found = []
            for rr, cc in ((r, c - 1), (r, c + 1), (r - 1, c), (r - 1, c + 1), (r + 1, c - 1), (r + 1, c)):
                if 0 <= rr < len(QWERTY_ROWS) and 0 <= cc < len(QWERTY_ROWS[rr]):
                    found.append(QWERTY_ROWS[rr][cc])
            neighbors[char] = ''.join(found)
    return neighbors


@dataclass(frozen=True)
class CorruptionConfig:
    p_max: float = DEFAULT_P_MAX
    op_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_OP_WEIGHTS))
    mask_token: str = DEFAULT_MASK_TOKEN
    keyboard_map: Mapping[str, str] = field(default_factory=qwerty_neighbors)

    def __post_init__(self):
        if not 0.0 <= self.p_max <= 1.0:
            raise ConfigError(f"p_max must be in [0, 1] (got {self.p_max})")
        unknown = set(self.op_weights) - set(OPERATIONS)
        if unknown:
            raise ConfigError(f"Unknown corruption operations: {sorted(unknown)}")
        if any(w < 0 for w in self.op_weights.values()):
            raise ConfigError("Operation weights must be >= 0")
        if sum(self.op_weights.values()) <= 0:
            raise ConfigError("Operation weights must sum to a positive value")

    @property
    def probabilities(self) -> np.ndarray:
        weights = np.array([float(self.op_weights.get(op, 0.0)) for op in OPERATIONS])
        return weights / weights.sum()

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> 'CorruptionConfig':
        """Build from the ``lexical`` block of a run config"""
        data = dict(data or {})
        keyboard_map = qwerty_neighbors()
        if data.get('keyboard_map_path'):
            keyboard_map = load_keyboard_map(data['keyboard_map_path'])
        weights = dict(DEFAULT_OP_WEIGHTS)
        if 'op_weights' in data:
            weights = {op: float(data['op_weights'].get(op, 0.0)) for op in OPERATIONS}
        return cls(
            p_max=float(data.get('p_max', DEFAULT_P_MAX)),
            op_weights=weights,
            mask_token=str(data.get('mask_token', DEFAULT_MASK_TOKEN)),
            keyboard_map=keyboard_map,
        )

    def to_dict(self) -> Dict:
        return {
            'p_max': self.p_max,
            'op_weights': {op: float(self.op_weights.get(op, 0.0)) for op in OPERATIONS},
            'mask_token': self.mask_token,
        }


@dataclass(frozen=True)
class SeveritySchedule:
    levels: Tuple[float, ...] = field(default_factory=lambda: tuple(SEVERITY_PRESETS['default']))

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if len(levels) < 2:
            raise ConfigError("Severity schedule needs at least two levels")
        if np.any(levels < 0) or np.any(levels > 1):
            raise ConfigError(f"Severities must lie in [0, 1]: {self.levels}")
        if not np.all(np.diff(levels) > 0):
            raise ConfigError(f"Severity schedule must be strictly increasing: {self.levels}")

    @classmethod
    def preset(cls, name: str) -> 'SeveritySchedule':
        if name not in SEVERITY_PRESETS:
            raise ConfigError(f"Unknown severity preset {name!r}; choose from {sorted(SEVERITY_PRESETS)}")
        return cls(tuple(SEVERITY_PRESETS[name]))

    @property
    def intensities(self) -> List[float]:
        return [float(level) for level in self.levels]

    def __len__(self) -> int:
        return len(self.levels)


def load_keyboard_map(path) -> Dict[str, str]:
    """Read a char -> neighbour-string JSON file"""
    try:
        with open(Path(path), 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read keyboard map {path}: {e}")
    if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
        raise ConfigError(f"Keyboard map {path} must map characters to strings")
    return {str(k): v for k, v in raw.items()}


def tokenize(text: str) -> List[str]:
    return text.split()


def _random_letter(rng: np.random.Generator) -> str:
    return LOWERCASE[int(rng.integers(len(LOWERCASE)))]


def _apply(op: str, token: str, config: CorruptionConfig, rng: np.random.Generator) -> str:
    if op == 'adjacent_swap' and len(token) >= 2:
        i = int(rng.integers(len(token) - 1))
        return token[:i] + token[i + 1] + token[i] + token[i + 2:]

    if op == 'keyboard_typo' and token:
        i = int(rng.integers(len(token)))
        char = token[i]
        options = config.keyboard_map.get(char.lower(), '')
        if options:
            replacement = options[int(rng.integers(len(options)))]
            if char.isupper():
                replacement = replacement.upper()
        else:
            replacement = _random_letter(rng)
        return token[:i] + replacement + token[i + 1:]

    if op == 'insert':
        i = int(rng.integers(len(token) + 1))
        return token[:i] + _random_letter(rng) + token[i:]

    if op == 'delete' and len(token) >= 2:
        i = int(rng.integers(len(token)))
        return token[:i] + token[i + 1:]

    # dropout_mask, and the fallback for tokens too short to swap/delete
    return config.mask_token


def corrupt_with_mask(tokens: Sequence[str], alpha: float, config: CorruptionConfig,
                      rng: np.random.Generator) -> Tuple[List[str], np.ndarray]:
    """
    Corrupt each token independently with probability alpha·p_max

    Returns:
        (corrupted tokens, boolean mask of the tokens that were hit)
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"severity must be in [0, 1] (got {alpha})")

    tokens = list(tokens)
    if not tokens:
        return [], np.zeros(0, dtype=bool)
    hit = rng.random(len(tokens)) < alpha * config.p_max
    ops = rng.choice(len(OPERATIONS), size=len(tokens), p=config.probabilities)

    corrupted = list(tokens)
    for i in np.flatnonzero(hit):
        corrupted[i] = _apply(OPERATIONS[ops[i]], tokens[i], config, rng)
    return corrupted, hit


def corrupt(tokens: Sequence[str], alpha: float, config: CorruptionConfig,
            rng: np.random.Generator) -> List[str]:
    corrupted, _ = corrupt_with_mask(tokens, alpha, config, rng)
    return corrupted


def corrupt_text(text: str, alpha: float, config: CorruptionConfig, rng: np.random.Generator) -> str:
    """tokenize -> corrupt -> join with single spaces"""
    return ' '.join(corrupt(tokenize(text), alpha, config, rng))
