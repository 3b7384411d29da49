import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .constants import (
    DEFAULT_SNR_SCHEDULE_DB,
    JITTER_ATTEMPTS,
    JITTER_GROWTH,
    JITTER_START,
    ConfigError,
    FactorizationFailure,
    InsufficientRows,
    NoiseError,
    NoiseKind,
    NonFiniteValue,
)
from .dataset import numeric_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SignalStats:
    """
    Clean-signal statistics of the selected numeric features

    covariance = D·R·D with D = diag(standard deviations). Immutable once
    estimated, so one instance is shared by every trial of a dataset.
    """
    feature_names: Tuple[str, ...]
    variances: np.ndarray
    correlation: np.ndarray
    covariance: np.ndarray
    n_rows_used: int

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def active(self) -> np.ndarray:
        """Mask of features with positive variance; the rest are never perturbed"""
        return self.variances > 0

    @cached_property
    def factor(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance restricted to active features"""
        sigma = self.covariance[np.ix_(self.active, self.active)]
        if sigma.size == 0:
            return sigma
        try:
            return np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            pass

        d = sigma.shape[0]
        jitter = JITTER_START * np.trace(sigma) / d
        for attempt in range(JITTER_ATTEMPTS):
            try:
                factor = np.linalg.cholesky(sigma + jitter * np.eye(d))
                logger.debug(f"Cholesky succeeded with jitter {jitter:.3e} (attempt {attempt + 1})")
                return factor
            except np.linalg.LinAlgError:
                jitter *= JITTER_GROWTH
        raise FactorizationFailure(
            f"Covariance of {list(self.feature_names)} not factorizable after {JITTER_ATTEMPTS} jitter attempts"
        )

    def to_dict(self) -> Dict:
        return {
            'feature_names': list(self.feature_names),
            'variances': self.variances.tolist(),
            'correlation': self.correlation.tolist(),
            'n_rows_used': self.n_rows_used,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'SignalStats':
        variances = np.asarray(data['variances'], dtype=float)
        correlation = np.asarray(data['correlation'], dtype=float)
        std = np.sqrt(variances)
        return cls(
            feature_names=tuple(data['feature_names']),
            variances=variances,
            correlation=correlation,
            covariance=correlation * np.outer(std, std),
            n_rows_used=int(data['n_rows_used']),
        )


@dataclass(frozen=True)
class SnrSchedule:
    levels_db: Tuple[float, ...] = field(default_factory=lambda: tuple(DEFAULT_SNR_SCHEDULE_DB))

    def __post_init__(self):
        levels = np.asarray(self.levels_db, dtype=float)
        if len(levels) < 2:
            raise ConfigError("SNR schedule needs at least two levels")
        if not np.all(np.isfinite(levels)):
            raise ConfigError(f"SNR schedule has non-finite levels: {self.levels_db}")
        if not np.all(np.diff(levels) < 0):
            raise ConfigError(f"SNR schedule must be strictly decreasing: {self.levels_db}")

    @property
    def snr_max_db(self) -> float:
        return float(self.levels_db[0])

    @property
    def intensities(self) -> List[float]:
        """n_k = SNR_max - SNR_k, the slope-test regressor"""
        return [self.snr_max_db - float(level) for level in self.levels_db]

    @property
    def alphas(self) -> List[float]:
        return [snr_to_alpha(level) for level in self.levels_db]

    def __len__(self) -> int:
        return len(self.levels_db)


def snr_to_alpha(snr_db: float) -> float:
    """Noise power relative to signal power: 10^(-SNR/10)"""
    if not np.isfinite(snr_db):
        raise ConfigError(f"SNR must be finite (got {snr_db})")
    return float(10.0 ** (-snr_db / 10.0))


def estimate_signal_stats(train_rows: Union[pd.DataFrame, np.ndarray],
                          selected_features: Sequence[str]) -> SignalStats:
    """
    Estimate variances, correlation and covariance once on the clean train split

    Args:
        train_rows: frame holding the selected columns, or an (n, d) matrix
        selected_features: feature names, column order of the result

    Raises:
        InsufficientRows: fewer than two rows
        NonFiniteValue: NaN or inf in the selected columns
    """
    if isinstance(train_rows, pd.DataFrame):
        matrix = numeric_matrix(train_rows, selected_features)
    else:
        matrix = np.asarray(train_rows, dtype=float)
    matrix = matrix.reshape(len(matrix), len(selected_features))

    if matrix.shape[0] < 2:
        raise InsufficientRows(f"Need at least 2 complete rows, got {matrix.shape[0]}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteValue("Selected features contain non-finite values")

    covariance = np.atleast_2d(np.cov(matrix, rowvar=False, ddof=1))
    covariance = (covariance + covariance.T) / 2.0
    variances = np.clip(np.diag(covariance).copy(), 0.0, None)
    std = np.sqrt(variances)

    active = variances > 0
    correlation = np.eye(len(variances))
    if active.any():
        block = covariance[np.ix_(active, active)] / np.outer(std[active], std[active])
        block = np.clip(block, -1.0, 1.0)
        np.fill_diagonal(block, 1.0)
        correlation[np.ix_(active, active)] = block

    # Constant features contribute zero rows/columns to Σ
    covariance = correlation * np.outer(std, std)
    return SignalStats(
        feature_names=tuple(selected_features),
        variances=variances,
        correlation=correlation,
        covariance=covariance,
        n_rows_used=int(matrix.shape[0]),
    )


def sample_noise(stats: SignalStats, kind: NoiseKind, alpha: float,
                 rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """
    Draw zero-mean Gaussian noise with per-feature variance alpha·σ_j²

    uncorrelated: N(0, alpha·diag(σ²)); correlated: N(0, alpha·Σ_signal).
    Returns shape (d,) or (size, d).
    """
    kind = NoiseKind(kind)
    if not kind.is_tabular:
        raise NoiseError(f"{kind.value} noise is not a tabular noise kind")
    if alpha < 0 or not np.isfinite(alpha):
        raise NoiseError(f"alpha must be finite and >= 0 (got {alpha})")

    d = len(stats.feature_names)
    n = 1 if size is None else int(size)
    if alpha == 0:
        noise = np.zeros((n, d))
        return noise[0] if size is None else noise

    z = rng.standard_normal((n, d))
    noise = np.zeros((n, d))
    if kind is NoiseKind.UNCORRELATED:
        noise[:, stats.active] = z[:, stats.active] * np.sqrt(alpha * stats.variances[stats.active])
    else:
        noise[:, stats.active] = np.sqrt(alpha) * (z[:, stats.active] @ stats.factor.T)
    return noise[0] if size is None else noise


def perturb_row(row: Mapping, stats: SignalStats, kind: NoiseKind, alpha: float,
                rng: np.random.Generator) -> Dict:
    """x' = x + ε on the selected numeric features; every other field is passed through"""
    missing = [name for name in stats.feature_names if name not in row]
    if missing:
        raise NoiseError(f"Row lacks selected features: {missing}")

    perturbed = dict(row)
    if alpha == 0:
        return perturbed
    noise = sample_noise(stats, kind, alpha, rng)
    for j, name in enumerate(stats.feature_names):
        perturbed[name] = float(row[name]) + float(noise[j])
    return perturbed


def perturb_rows(rows: pd.DataFrame, stats: SignalStats, kind: NoiseKind, alpha: float,
                 rng: np.random.Generator) -> pd.DataFrame:
    """Vectorised perturb_row over a frame; non-selected columns are untouched"""
    perturbed = rows.copy()
    if alpha == 0 or len(rows) == 0:
        return perturbed
    names = list(stats.feature_names)
    noise = sample_noise(stats, kind, alpha, rng, size=len(rows))
    perturbed[names] = numeric_matrix(rows, names) + noise
    return perturbed
