import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .constants import (
    DEFAULT_FEATURE_CAP,
    DEFAULT_MIN_ROWS,
    SPLIT_FRACTIONS,
    ConfigError,
    DegenerateSplit,
    EligibilityError,
    FeatureKind,
    InsufficientData,
    NoNumericFeatures,
    ParseError,
    PrimaryMetric,
    SchemaError,
    TaskKind,
)

logger = logging.getLogger(__name__)

# String columns whose median token count reaches this are profiled as free text
TEXT_MIN_MEDIAN_TOKENS = 3


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: FeatureKind
    observed_min: Optional[float] = None
    observed_max: Optional[float] = None
    distinct_count: int = 0
    variance: Optional[float] = None
    position: int = 0

    def __post_init__(self):
        if self.kind is FeatureKind.NUMERIC and self.observed_min is not None:
            if self.observed_min > self.observed_max:
                raise SchemaError(f"Feature {self.name}: min > max")


@dataclass(frozen=True)
class TaskSpec:
    task_kind: TaskKind
    label_space: Tuple[str, ...] = ()
    value_range: Optional[Tuple[float, float]] = None
    target_name: str = 'label'

    def __post_init__(self):
        if self.task_kind is TaskKind.CLASSIFICATION:
            if not self.label_space:
                raise ConfigError("Classification task needs a non-empty label space")
            if len(set(self.label_space)) != len(self.label_space):
                raise ConfigError(f"Label space has duplicate entries: {self.label_space}")

    @property
    def primary_metric(self) -> PrimaryMetric:
        if self.task_kind is TaskKind.CLASSIFICATION:
            return PrimaryMetric.ACCURACY
        return PrimaryMetric.R_SQUARED

    @property
    def is_classification(self) -> bool:
        return self.task_kind is TaskKind.CLASSIFICATION


@dataclass(frozen=True)
class SplitSet:
    train: Tuple[int, ...]
    valid: Tuple[int, ...]
    test: Tuple[int, ...]
    stratified: bool
    fractions: Tuple[float, float, float] = SPLIT_FRACTIONS

    def assert_partition(self, index: Sequence[int]):
        """Raise if train/valid/test do not partition ``index``"""
        parts = [set(self.train), set(self.valid), set(self.test)]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise DegenerateSplit("Split sets overlap")
        if parts[0] | parts[1] | parts[2] != set(index):
            raise DegenerateSplit("Split sets do not cover the retained rows")


@dataclass(frozen=True)
class EligibilityReport:
    numeric_fraction: float
    rows_dropped_missing: int
    eligible: bool
    reason: str
    kept_index: Tuple[int, ...] = field(default=(), repr=False)
    selected: Tuple[str, ...] = field(default=(), repr=False)

    def to_dict(self) -> Dict:
        return {
            'numeric_fraction': self.numeric_fraction,
            'rows_dropped_missing': self.rows_dropped_missing,
            'eligible': self.eligible,
            'reason': self.reason,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Declares where a dataset lives and how to read it"""
    dataset_id: str
    path: Path
    format: str
    task_kind: TaskKind
    label_field: str
    text_field: Optional[str] = None
    label_space: Optional[Tuple[str, ...]] = None
    description: str = ''
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def modality(self) -> str:
        return 'text' if self.text_field else 'tabular'

    @classmethod
    def load(cls, manifest_path) -> 'DatasetManifest':
        manifest_path = Path(manifest_path)
        try:
            with open(manifest_path, 'r', encoding='utf-8') as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Dataset manifest not found: {manifest_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Dataset manifest is not valid JSON: {e}")

        for key in ('path', 'format', 'task_kind', 'label_field'):
            if key not in raw:
                raise ConfigError(f"Dataset manifest missing required field: {key}")

        data_path = Path(raw['path'])
        if not data_path.is_absolute():
            data_path = manifest_path.parent / data_path

        label_space = raw.get('label_space')
        try:
            task_kind = TaskKind(raw['task_kind'])
        except ValueError:
            raise ConfigError(f"Unknown task_kind: {raw['task_kind']}")
        return cls(
            dataset_id=raw.get('id', manifest_path.stem),
            path=data_path,
            format=raw['format'],
            task_kind=task_kind,
            label_field=raw['label_field'],
            text_field=raw.get('text_field'),
            label_space=tuple(str(v) for v in label_space) if label_space else None,
            description=raw.get('description', ''),
            tags={str(k): str(v) for k, v in raw.get('tags', {}).items()},
        )


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f, strict=True)
            rows = list(reader)
    except csv.Error as e:
        raise ParseError(f"{path}: {e}")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 text ({e})")

    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ParseError(f"{path}: header row missing")

    header = [name.strip() for name in rows[0]]
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")

    body = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(
                f"{path}: line {line_no} has {len(row)} fields, header has {len(header)}"
            )
        body.append([cell if cell != '' else None for cell in row])
    return pd.DataFrame(body, columns=header, dtype=object)


def _read_jsonl(path: Path) -> pd.DataFrame:
    records = []
    columns: List[str] = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.readlines()
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 text ({e})")

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: line {line_no}: {e}")
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: line {line_no} is not a JSON object")
        if not columns:
            columns = list(obj.keys())
        extra = set(obj) - set(columns)
        if extra:
            raise SchemaError(f"{path}: line {line_no} has unexpected fields {sorted(extra)}")

        row = []
        for name in columns:
            value = obj.get(name)
            if isinstance(value, (dict, list)):
                raise SchemaError(f"{path}: line {line_no} field {name} is not a scalar")
            if value is None or value == '':
                row.append(None)
            else:
                row.append(value if isinstance(value, str) else json.dumps(value))
        records.append(row)

    if not columns:
        raise ParseError(f"{path}: no records")
    return pd.DataFrame(records, columns=columns, dtype=object)


def profile(frame: pd.DataFrame, text_field: Optional[str] = None,
            label_field: Optional[str] = None) -> List[FeatureDescriptor]:
    """
    Type every column of a raw frame

    Args:
        frame: raw string frame, missing cells as None
        text_field: column forced to the text kind
        label_field: column never typed as numeric (labels stay verbatim)

    Returns:
        One descriptor per column, in column order
    """
    descriptors = []
    for position, name in enumerate(frame.columns):
        column = frame[name].dropna()
        distinct = int(column.nunique())

        if name == text_field:
            descriptors.append(FeatureDescriptor(name, FeatureKind.TEXT, distinct_count=distinct,
                                                 position=position))
            continue

        values = pd.to_numeric(column, errors='coerce')
        numeric = (
            name != label_field
            and len(column) > 0
            and not values.isna().any()
            and bool(np.isfinite(values.to_numpy(dtype=float)).all())
        )
        if numeric:
            array = values.to_numpy(dtype=float)
            variance = float(np.var(array, ddof=1)) if len(array) > 1 else 0.0
            descriptors.append(FeatureDescriptor(
                name, FeatureKind.NUMERIC,
                observed_min=float(array.min()),
                observed_max=float(array.max()),
                distinct_count=distinct,
                variance=variance,
                position=position,
            ))
            continue

        kind = FeatureKind.CATEGORICAL
        if text_field is None and name != label_field and len(column) > 0:
            median_tokens = column.map(lambda v: len(str(v).split())).median()
            if median_tokens >= TEXT_MIN_MEDIAN_TOKENS:
                kind = FeatureKind.TEXT
        descriptors.append(FeatureDescriptor(name, kind, distinct_count=distinct, position=position))
    return descriptors


def load_table(path, format: str, text_field: Optional[str] = None,
               label_field: Optional[str] = None) -> Tuple[pd.DataFrame, List[FeatureDescriptor]]:
    """
    Read a csv or jsonl dataset

    Returns:
        (rows, descriptors); empty cells come back as missing (None), never as ''
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"Dataset file not found: {path}")

    if format == 'csv':
        frame = _read_csv(path)
    elif format == 'jsonl':
        frame = _read_jsonl(path)
    else:
        raise ConfigError(f"Unsupported dataset format: {format}")

    for name in (text_field, label_field):
        if name is not None and name not in frame.columns:
            raise SchemaError(f"{path}: column {name!r} not found")

    descriptors = profile(frame, text_field=text_field, label_field=label_field)
    logger.info(f"Loaded {path.name}: {len(frame)} rows, {len(descriptors)} columns")
    return frame, descriptors


def check_eligibility(descriptors: List[FeatureDescriptor], rows: pd.DataFrame,
                      min_rows: int = DEFAULT_MIN_ROWS, label_field: Optional[str] = None,
                      modality: str = 'tabular',
                      feature_cap: Optional[int] = None) -> EligibilityReport:
    """
    Apply the numeric-coverage and missing-value filters

    Tabular datasets need a strict majority of numeric features; text datasets
    need a text column. Rows with a missing value in a selected feature (or the
    label) are dropped before the row-count check. With ``feature_cap`` set,
    only the features ``select_features`` would keep count as selected.
    """
    features = [d for d in descriptors if d.name != label_field]
    numeric = [d for d in features if d.kind is FeatureKind.NUMERIC]
    numeric_fraction = len(numeric) / len(features) if features else 0.0

    if modality == 'text':
        selected = tuple(d.name for d in features if d.kind is FeatureKind.TEXT)
    elif numeric and feature_cap is not None:
        selected = tuple(d.name for d in select_features(descriptors, cap=feature_cap,
                                                         label_field=label_field))
    else:
        selected = tuple(d.name for d in numeric)
    retained = list(selected)
    if label_field is not None:
        retained.append(label_field)

    complete = rows[retained].notna().all(axis=1) if retained else pd.Series(True, index=rows.index)
    kept_index = tuple(int(i) for i in rows.index[complete])
    dropped = len(rows) - len(kept_index)

    if modality == 'text':
        coverage_ok = any(d.kind is FeatureKind.TEXT for d in features)
        coverage_reason = "no text feature"
    else:
        coverage_ok = numeric_fraction > 0.5
        coverage_reason = f"numeric fraction {numeric_fraction:.2f} is not above 0.5"

    if not coverage_ok:
        eligible, reason = False, coverage_reason
    elif len(kept_index) < min_rows:
        eligible = False
        reason = (f"missing-value drop-off: {dropped} rows dropped, "
                  f"{len(kept_index)} remain (< {min_rows})")
    else:
        eligible, reason = True, "ok"

    return EligibilityReport(
        numeric_fraction=numeric_fraction,
        rows_dropped_missing=dropped,
        eligible=eligible,
        reason=reason,
        kept_index=kept_index,
        selected=selected,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(rows: pd.DataFrame, task: TaskSpec, seed: int,
          label_field: Optional[str] = None) -> SplitSet:
    """
    Deterministic 0.70/0.15/0.15 split; the train part is stratified by class
    for classification tasks, valid/test are drawn uniformly from the rest
    """
    n = len(rows)
    n_train = _round_half_up(SPLIT_FRACTIONS[0] * n)
    n_valid = _round_half_up(SPLIT_FRACTIONS[1] * n)
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) <= 0:
        raise DegenerateSplit(f"{n} rows cannot fill all three splits")

    rng = np.random.default_rng(seed)
    index = np.asarray(rows.index, dtype=int)

    if task.is_classification:
        labels = rows[label_field or task.target_name].astype(str).to_numpy()
        members = {label: index[labels == label] for label in task.label_space}
        empty = [label for label, idx in members.items() if len(idx) == 0]
        if empty:
            raise InsufficientData(f"No rows for classes: {empty}")

        # Largest-remainder allocation keeps every class within one row of its share
        exact = np.array([n_train * len(idx) / n for idx in members.values()])
        quota = np.floor(exact).astype(int)
        short = n_train - int(quota.sum())
        order = np.argsort(-(exact - quota), kind='stable')
        quota[order[:short]] += 1

        train_parts = []
        rest_parts = []
        for q, idx in zip(quota, members.values()):
            shuffled = rng.permutation(idx)
            train_parts.append(shuffled[:q])
            rest_parts.append(shuffled[q:])
        train = np.concatenate(train_parts)
        rest = rng.permutation(np.concatenate(rest_parts))
        stratified = True
    else:
        shuffled = rng.permutation(index)
        train, rest = shuffled[:n_train], shuffled[n_train:]
        stratified = False

    result = SplitSet(
        train=tuple(sorted(int(i) for i in train)),
        valid=tuple(sorted(int(i) for i in rest[:n_valid])),
        test=tuple(sorted(int(i) for i in rest[n_valid:])),
        stratified=stratified,
    )
    result.assert_partition(index)
    return result


def select_features(descriptors: List[FeatureDescriptor], cap: int = DEFAULT_FEATURE_CAP,
                    label_field: Optional[str] = None) -> List[FeatureDescriptor]:
    """Keep at most ``cap`` numeric features, highest variance first, ties by column order"""
    if cap < 1:
        raise ConfigError(f"feature cap must be >= 1 (got {cap})")
    numeric = [d for d in descriptors if d.kind is FeatureKind.NUMERIC and d.name != label_field]
    if not numeric:
        raise NoNumericFeatures("No numeric features left after filtering")
    ranked = sorted(numeric, key=lambda d: (-(d.variance or 0.0), d.position))
    return ranked[:cap]


def numeric_matrix(rows: pd.DataFrame, names: Sequence[str]) -> np.ndarray:
    """Selected columns as a float matrix ('.' decimal point, locale independent)"""
    return rows[list(names)].astype(float).to_numpy()


def infer_task(manifest: DatasetManifest, rows: pd.DataFrame) -> TaskSpec:
    """Build the TaskSpec from the manifest, reading labels off the data when needed"""
    labels = rows[manifest.label_field].dropna()
    if manifest.task_kind is TaskKind.CLASSIFICATION:
        label_space = manifest.label_space or tuple(sorted(labels.astype(str).unique()))
        return TaskSpec(TaskKind.CLASSIFICATION, label_space=label_space,
                        target_name=manifest.label_field)

    try:
        values = labels.astype(float)
    except ValueError as e:
        raise SchemaError(f"Regression target {manifest.label_field} is not numeric: {e}")
    value_range = (float(values.min()), float(values.max())) if len(values) else None
    return TaskSpec(TaskKind.REGRESSION, value_range=value_range, target_name=manifest.label_field)


@dataclass
class PreparedDataset:
    """A filtered, split and feature-capped dataset ready for trials"""
    manifest: DatasetManifest
    task: TaskSpec
    rows: pd.DataFrame
    descriptors: List[FeatureDescriptor]
    selected: List[FeatureDescriptor]
    eligibility: EligibilityReport
    splits: SplitSet

    @property
    def dataset_id(self) -> str:
        return self.manifest.dataset_id

    @property
    def feature_names(self) -> List[str]:
        return [d.name for d in self.selected]

    def split_rows(self, name: str) -> pd.DataFrame:
        return self.rows.loc[list(getattr(self.splits, name))]


def prepare_dataset(manifest: DatasetManifest, seed: int, feature_cap: int = DEFAULT_FEATURE_CAP,
                    min_rows: int = DEFAULT_MIN_ROWS) -> PreparedDataset:
    """Load, filter, split and select features in the order the protocol needs"""
    rows, descriptors = load_table(manifest.path, manifest.format,
                                   text_field=manifest.text_field,
                                   label_field=manifest.label_field)
    report = check_eligibility(descriptors, rows, min_rows=min_rows,
                               label_field=manifest.label_field, modality=manifest.modality,
                               feature_cap=feature_cap)
    if not report.eligible:
        raise EligibilityError(f"{manifest.dataset_id} is not eligible: {report.reason}")
    if report.rows_dropped_missing:
        logger.info(f"{manifest.dataset_id}: dropped {report.rows_dropped_missing} rows with missing values")

    kept = rows.loc[list(report.kept_index)]
    descriptors = profile(kept, text_field=manifest.text_field, label_field=manifest.label_field)
    task = infer_task(manifest, kept)

    if task.is_classification:
        unknown = set(kept[manifest.label_field].astype(str)) - set(task.label_space)
        if unknown:
            raise SchemaError(f"{manifest.dataset_id}: labels outside label space: {sorted(unknown)}")

    if manifest.modality == 'text':
        selected = [d for d in descriptors if d.name == manifest.text_field]
    else:
        # Selection was made on the full table; refresh the descriptors on the kept rows
        by_name = {d.name: d for d in descriptors}
        selected = [by_name[name] for name in report.selected]

    splits = split(kept, task, seed, label_field=manifest.label_field)
    return PreparedDataset(
        manifest=manifest,
        task=task,
        rows=kept,
        descriptors=descriptors,
        selected=selected,
        eligibility=report,
        splits=splits,
    )
