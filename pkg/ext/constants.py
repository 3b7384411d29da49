from enum import Enum
from typing import Dict, List, Tuple

# Experimental defaults
DEFAULT_REPETITIONS = 5
DEFAULT_N_CONTEXT = 20
DEFAULT_FEATURE_CAP = 10
DEFAULT_ALPHA_LEVEL = 0.05
DEFAULT_MIN_ROWS = 30
SPLIT_FRACTIONS: Tuple[float, float, float] = (0.70, 0.15, 0.15)
BATCH_SIZES = {
    'tabular': 500,
    'text': 50
}
PARTIAL_RUN_THRESHOLD = 0.80

# Noise schedules
DEFAULT_SNR_SCHEDULE_DB: List[float] = [20.0, 10.0, 5.0, 0.0, -5.0, -10.0]
SEVERITY_PRESETS: Dict[str, List[float]] = {
    'default': [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
    'figure': [0.0, 0.33, 0.67, 1.0]
}
JITTER_START = 1e-10    # relative to trace(Σ)/d
JITTER_GROWTH = 10.0
JITTER_ATTEMPTS = 5

# Lexical corruption
DEFAULT_P_MAX = 1.0
DEFAULT_MASK_TOKEN = '[MASK]'
DEFAULT_OP_WEIGHTS: Dict[str, float] = {
    'dropout_mask': 0.25,
    'adjacent_swap': 0.25,
    'keyboard_typo': 0.25,
    'insert': 0.125,
    'delete': 0.125
}
QWERTY_ROWS = ['1234567890', 'qwertyuiop', 'asdfghjkl', 'zxcvbnm']

# Judge execution
SCHEMA_RETRIES = 3
TRANSPORT_RETRIES = 5
BACKOFF_START = 1.0     # seconds
BACKOFF_FACTOR = 2.0
REQUEST_TIMEOUT = 120.0  # seconds
MAX_IN_FLIGHT = 4
PROMPT_CHAR_BUDGET = 100_000
API_KEY_ENV = 'JUDGECAL_API_KEY'

# Statistics
BOOTSTRAP_RESAMPLES = 10_000
P_VALUE_FLOOR = 1e-10
QUANTILE_XTOL = 1e-12

# Run directory layout
CONFIG_FILE = 'config.json'
TRIALS_FILE = 'trials.jsonl'
VERDICT_FILE = 'verdict.json'
SIGNAL_STATS_FILE = 'signal_stats.json'
TRANSCRIPTS_DIR = 'transcripts'

# Logging Settings
LOG_DIR = 'logs'
LOG_FILE = 'judgecal.log'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

# Exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_RUN = 2


class FeatureKind(str, Enum):
    NUMERIC = 'numeric'
    CATEGORICAL = 'categorical'
    TEXT = 'text'


class TaskKind(str, Enum):
    CLASSIFICATION = 'classification'
    REGRESSION = 'regression'


class PrimaryMetric(str, Enum):
    ACCURACY = 'accuracy'
    R_SQUARED = 'r_squared'


class NoiseKind(str, Enum):
    UNCORRELATED = 'uncorrelated'
    CORRELATED = 'correlated'
    LEXICAL = 'lexical'

    @property
    def is_tabular(self) -> bool:
        return self is not NoiseKind.LEXICAL

    @classmethod
    def values(cls) -> List[str]:
        return [kind.value for kind in cls]


class JudgeKind(str, Enum):
    REMOTE = 'remote'
    SIM_CENTROID = 'sim_centroid'
    SIM_SCRIPTED = 'sim_scripted'


class Decision(str, Enum):
    SENSITIVE = 'sensitive'
    INSENSITIVE = 'insensitive'


# Label recorded on clean-baseline trials in place of a noise kind
BASELINE_KIND = 'baseline'


class _Missing:
    """Marker for an evaluation slot with no valid judge answer"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return 'MISSING'

    def __bool__(self) -> bool:
        return False


MISSING = _Missing()

# Messages
MESSAGES = {
    'MISSING_FIELD': "❌ Missing required field: {field}",
    'INVALID_REPS': "❌ repetitions must be >= 1 (got {value})",
    'NO_RUNS': "❌ No completed runs found in: {paths}",
    'PARTIAL_RUN': "⚠️ Run incomplete: {present}/{expected} trials recorded",
    'VERDICT_WRITTEN': "✅ Verdict written: {path}",
    'USAGE': "Usage: judgecal run|analyze|report|compare-groups [options]",
}


# Custom Exceptions
class JudgeCalError(Exception):
    """Base class for every harness error"""
    pass


class ConfigError(JudgeCalError):
    """Invalid or incomplete configuration"""
    pass


class DatasetError(JudgeCalError):
    pass


class ParseError(DatasetError):
    """Malformed dataset file"""
    pass


class SchemaError(DatasetError):
    """Ragged rows or unexpected columns"""
    pass


class InsufficientData(DatasetError):
    pass


class DegenerateSplit(DatasetError):
    pass


class NoNumericFeatures(DatasetError):
    pass


class EligibilityError(DatasetError):
    pass


class NoiseError(JudgeCalError):
    pass


class InsufficientRows(NoiseError):
    pass


class NonFiniteValue(NoiseError):
    pass


class FactorizationFailure(NoiseError):
    pass


class JudgeError(JudgeCalError):
    pass


class TransportError(JudgeError):
    """Network-level failure talking to the judge endpoint"""
    pass


class RateLimited(TransportError):
    pass


class AuthError(JudgeError):
    """Rejected credential; never retried"""
    pass


class ContextOverflow(JudgeError):
    pass


class MetricError(JudgeCalError):
    pass


class NoScoredPredictions(MetricError):
    pass


class ZeroVariance(MetricError):
    pass


class StatsError(JudgeCalError):
    pass


class DegenerateDesign(StatsError):
    pass


class InvalidDf(StatsError):
    pass


class InvalidProbability(StatsError):
    pass


class EmptyGroup(StatsError):
    pass


class ProtocolError(JudgeCalError):
    pass


class PartialRun(ProtocolError):
    """Some trials failed; ``verdict`` is set when enough survived to compute one"""

    def __init__(self, present: int, expected: int, verdict=None):
        self.present = present
        self.expected = expected
        self.verdict = verdict
        super().__init__(MESSAGES['PARTIAL_RUN'].format(present=present, expected=expected))


class ConfigMismatch(ProtocolError):
    pass


class NoRunsFound(ProtocolError):
    pass


# Exports
__all__ = [
    'DEFAULT_REPETITIONS',
    'DEFAULT_N_CONTEXT',
    'DEFAULT_FEATURE_CAP',
    'DEFAULT_ALPHA_LEVEL',
    'DEFAULT_MIN_ROWS',
    'SPLIT_FRACTIONS',
    'BATCH_SIZES',
    'PARTIAL_RUN_THRESHOLD',
    'DEFAULT_SNR_SCHEDULE_DB',
    'SEVERITY_PRESETS',
    'JITTER_START',
    'JITTER_GROWTH',
    'JITTER_ATTEMPTS',
    'DEFAULT_P_MAX',
    'DEFAULT_MASK_TOKEN',
    'DEFAULT_OP_WEIGHTS',
    'QWERTY_ROWS',
    'SCHEMA_RETRIES',
    'TRANSPORT_RETRIES',
    'BACKOFF_START',
    'BACKOFF_FACTOR',
    'REQUEST_TIMEOUT',
    'MAX_IN_FLIGHT',
    'PROMPT_CHAR_BUDGET',
    'API_KEY_ENV',
    'BOOTSTRAP_RESAMPLES',
    'P_VALUE_FLOOR',
    'QUANTILE_XTOL',
    'CONFIG_FILE',
    'TRIALS_FILE',
    'VERDICT_FILE',
    'SIGNAL_STATS_FILE',
    'TRANSCRIPTS_DIR',
    'LOG_DIR',
    'LOG_FILE',
    'LOG_FORMAT',
    'LOG_DATE_FORMAT',
    'EXIT_OK',
    'EXIT_CONFIG_ERROR',
    'EXIT_PARTIAL_RUN',
    'FeatureKind',
    'TaskKind',
    'PrimaryMetric',
    'NoiseKind',
    'JudgeKind',
    'Decision',
    'BASELINE_KIND',
    'MISSING',
    'MESSAGES',
    'JudgeCalError',
    'ConfigError',
    'DatasetError',
    'ParseError',
    'SchemaError',
    'InsufficientData',
    'DegenerateSplit',
    'NoNumericFeatures',
    'EligibilityError',
    'NoiseError',
    'InsufficientRows',
    'NonFiniteValue',
    'FactorizationFailure',
    'JudgeError',
    'TransportError',
    'RateLimited',
    'AuthError',
    'ContextOverflow',
    'MetricError',
    'NoScoredPredictions',
    'ZeroVariance',
    'StatsError',
    'DegenerateDesign',
    'InvalidDf',
    'InvalidProbability',
    'EmptyGroup',
    'ProtocolError',
    'PartialRun',
    'ConfigMismatch',
    'NoRunsFound',
]
