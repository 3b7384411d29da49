import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from sklearn.metrics import (
    accuracy_score,
    mean_absolute_error,
    mean_squared_error,
    precision_recall_fscore_support,
    r2_score,
)

from .constants import MISSING, NoScoredPredictions, PrimaryMetric, ZeroVariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    primary: float
    primary_metric: str
    n_scored: int
    n_missing: int
    coverage: float
    accuracy: Optional[float] = None
    precision_macro: Optional[float] = None
    recall_macro: Optional[float] = None
    f1_macro: Optional[float] = None
    r_squared: Optional[float] = None
    mse: Optional[float] = None
    mae: Optional[float] = None

    def to_dict(self) -> Dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Dict) -> 'MetricReport':
        return cls(**{k: data.get(k) for k in cls.__dataclass_fields__ if k in data})


def _scored_pairs(preds: Sequence, truths: Sequence):
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} truths")
    pairs = [(p, t) for p, t in zip(preds, truths) if p is not MISSING]
    n_missing = len(preds) - len(pairs)
    if not pairs:
        raise NoScoredPredictions(f"All {len(preds)} predictions are missing")
    return pairs, n_missing


def score_classification(preds: Sequence, truths: Sequence,
                         label_space: Optional[Sequence[str]] = None) -> MetricReport:
    """
    Accuracy plus macro precision/recall/F1 over the label space

    MISSING predictions are left out of numerator and denominator and show up
    in ``n_missing`` / ``coverage`` instead.
    """
    pairs, n_missing = _scored_pairs(preds, truths)
    y_pred = [str(p) for p, _ in pairs]
    y_true = [str(t) for _, t in pairs]
    labels = list(label_space) if label_space else sorted(set(y_true) | set(y_pred))

    accuracy = float(accuracy_score(y_true, y_pred))
    precision, recall, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average='macro', zero_division=0
    )
    n_scored = len(pairs)
    return MetricReport(
        primary=accuracy,
        primary_metric=PrimaryMetric.ACCURACY.value,
        n_scored=n_scored,
        n_missing=n_missing,
        coverage=n_scored / (n_scored + n_missing),
        accuracy=accuracy,
        precision_macro=float(precision),
        recall_macro=float(recall),
        f1_macro=float(f1),
    )


def score_regression(preds: Sequence, truths: Sequence) -> MetricReport:
    """R² (primary), MSE and MAE over the scored pairs"""
    pairs, n_missing = _scored_pairs(preds, truths)
    y_pred = np.array([float(p) for p, _ in pairs])
    y_true = np.array([float(t) for _, t in pairs])
    if not np.all(np.isfinite(y_true)):
        raise ValueError("Regression truths must be finite")
    if np.all(y_true == y_true[0]):
        raise ZeroVariance("All scored truths are equal; R² is undefined")

    r_squared = float(r2_score(y_true, y_pred))
    n_scored = len(pairs)
    return MetricReport(
        primary=r_squared,
        primary_metric=PrimaryMetric.R_SQUARED.value,
        n_scored=n_scored,
        n_missing=n_missing,
        coverage=n_scored / (n_scored + n_missing),
        r_squared=r_squared,
        mse=float(mean_squared_error(y_true, y_pred)),
        mae=float(mean_absolute_error(y_true, y_pred)),
    )


def score(preds: Sequence, truths: Sequence, task) -> MetricReport:
    """Dispatch on the task kind"""
    if task.is_classification:
        return score_classification(preds, truths, task.label_space)
    return score_regression(preds, truths)
