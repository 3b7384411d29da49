import asyncio
import hashlib
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from run_store import RunStore, discover_runs

from .base_handler import BaseLockHandler
from .cache_manager import cached
from .constants import (
    BASELINE_KIND,
    BATCH_SIZES,
    BOOTSTRAP_RESAMPLES,
    DEFAULT_ALPHA_LEVEL,
    DEFAULT_FEATURE_CAP,
    DEFAULT_MIN_ROWS,
    DEFAULT_N_CONTEXT,
    DEFAULT_REPETITIONS,
    DEFAULT_SNR_SCHEDULE_DB,
    MESSAGES,
    PARTIAL_RUN_THRESHOLD,
    SEVERITY_PRESETS,
    ConfigError,
    Decision,
    EmptyGroup,
    JudgeError,
    AuthError,
    MetricError,
    NoiseError,
    NoiseKind,
    PartialRun,
    PrimaryMetric,
)
from .dataset import DatasetManifest, PreparedDataset, prepare_dataset
from .judge import JudgeClient, JudgePrediction, JudgeSpec, build_system_prompt, build_user_prompt, sim_predict
from .lexical_noise import CorruptionConfig, SeveritySchedule, corrupt_text
from .metrics import MetricReport, score
from .stats import (
    GroupComparison,
    GroupComparisonRow,
    SlopeTestResult,
    bootstrap_median_diff,
    dispersion,
    ecdf,
    ols_fit,
    slope_test,
)
from .tabular_noise import SignalStats, SnrSchedule, estimate_signal_stats, perturb_rows

logger = logging.getLogger(__name__)

PERTURB_SPLITS = ('test', 'train')
FEW_SHOT_STREAM = 'few_shot'


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    judge: JudgeSpec
    noise_kinds: Tuple[NoiseKind, ...] = (NoiseKind.CORRELATED, NoiseKind.UNCORRELATED)
    snr_schedule_db: Tuple[float, ...] = tuple(DEFAULT_SNR_SCHEDULE_DB)
    severity_levels: Tuple[float, ...] = tuple(SEVERITY_PRESETS['default'])
    lexical: Mapping[str, Any] = field(default_factory=dict)
    repetitions: int = DEFAULT_REPETITIONS
    n_context: int = DEFAULT_N_CONTEXT
    feature_cap: int = DEFAULT_FEATURE_CAP
    batch_size: Optional[int] = None
    alpha_level: float = DEFAULT_ALPHA_LEVEL
    master_seed: int = 0
    split_seed: int = 0
    min_rows: int = DEFAULT_MIN_ROWS
    perturb: str = 'test'
    baseline_reps: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        if not self.dataset:
            raise ConfigError(MESSAGES['MISSING_FIELD'].format(field='dataset'))
        if self.repetitions < 1:
            raise ConfigError(MESSAGES['INVALID_REPS'].format(value=self.repetitions))
        if self.baseline_reps < 1:
            raise ConfigError(f"baseline_reps must be >= 1 (got {self.baseline_reps})")
        if self.n_context < 0:
            raise ConfigError(f"n_context must be >= 0 (got {self.n_context})")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1 (got {self.batch_size})")
        if not 0.0 < self.alpha_level < 1.0:
            raise ConfigError(f"alpha_level must be in (0, 1) (got {self.alpha_level})")
        if self.master_seed < 0 or self.split_seed < 0:
            raise ConfigError("Seeds must be non-negative integers")
        if self.perturb not in PERTURB_SPLITS:
            raise ConfigError(f"perturb must be one of {PERTURB_SPLITS} (got {self.perturb!r})")
        if not self.noise_kinds:
            raise ConfigError(MESSAGES['MISSING_FIELD'].format(field='noise.kinds'))
        if len(set(self.noise_kinds)) != len(self.noise_kinds):
            raise ConfigError(f"Duplicate noise kinds: {[k.value for k in self.noise_kinds]}")
        # Validates the schedules and the corruption settings up front
        self.snr_schedule
        self.severity_schedule
        self.corruption

    @property
    def snr_schedule(self) -> SnrSchedule:
        return SnrSchedule(tuple(self.snr_schedule_db))

    @property
    def severity_schedule(self) -> SeveritySchedule:
        return SeveritySchedule(tuple(self.severity_levels))

    @property
    def corruption(self) -> CorruptionConfig:
        return CorruptionConfig.from_dict(self.lexical)

    def levels_for(self, kind: NoiseKind) -> List[Tuple[float, float, float]]:
        """(severity, intensity n_k, noise scale) per level, in schedule order"""
        if kind.is_tabular:
            schedule = self.snr_schedule
            return list(zip(map(float, schedule.levels_db), schedule.intensities, schedule.alphas))
        levels = self.severity_schedule.intensities
        return [(level, level, level) for level in levels]

    def expected_trials(self) -> int:
        return sum(len(self.levels_for(kind)) for kind in self.noise_kinds) * self.repetitions

    @classmethod
    def from_dict(cls, data: Mapping, output_dir: Optional[str] = None) -> 'RunConfig':
        """
        Build from a merged config mapping

        ``noise`` accepts ``kinds`` (list) or ``kind`` (single), plus
        ``snr_schedule_db``, ``severity_levels`` or ``severity_preset`` and a
        ``schedule`` shorthand applied to whichever modality the kinds need.
        """
        data = dict(data)
        for key in ('dataset', 'judge'):
            if not data.get(key):
                raise ConfigError(MESSAGES['MISSING_FIELD'].format(field=key))

        noise = dict(data.get('noise') or {})
        raw_kinds = noise.get('kinds') or ([noise['kind']] if noise.get('kind') else
                                           [NoiseKind.CORRELATED.value, NoiseKind.UNCORRELATED.value])
        try:
            kinds = tuple(NoiseKind(k) for k in raw_kinds)
        except ValueError as e:
            raise ConfigError(f"Unknown noise kind: {e}")

        snr = noise.get('snr_schedule_db', DEFAULT_SNR_SCHEDULE_DB)
        severities = noise.get('severity_levels')
        if severities is None:
            preset = noise.get('severity_preset', 'default')
            if preset not in SEVERITY_PRESETS:
                raise ConfigError(f"Unknown severity preset {preset!r}")
            severities = SEVERITY_PRESETS[preset]
        if noise.get('schedule') is not None:
            if any(kind.is_tabular for kind in kinds):
                snr = noise['schedule']
            if NoiseKind.LEXICAL in kinds:
                severities = noise['schedule']

        judge = data['judge']
        if not isinstance(judge, JudgeSpec):
            judge = JudgeSpec.from_dict(judge)

        try:
            return cls(
                dataset=str(data['dataset']),
                judge=judge,
                noise_kinds=kinds,
                snr_schedule_db=tuple(float(v) for v in snr),
                severity_levels=tuple(float(v) for v in severities),
                lexical=dict(noise.get('lexical') or {}),
                repetitions=int(data.get('repetitions', DEFAULT_REPETITIONS)),
                n_context=int(data.get('n_context', DEFAULT_N_CONTEXT)),
                feature_cap=int(data.get('feature_cap', DEFAULT_FEATURE_CAP)),
                batch_size=int(data['batch_size']) if data.get('batch_size') is not None else None,
                alpha_level=float(data.get('alpha_level', DEFAULT_ALPHA_LEVEL)),
                master_seed=int(data.get('master_seed', 0)),
                split_seed=int(data.get('split_seed', 0)),
                min_rows=int(data.get('min_rows', DEFAULT_MIN_ROWS)),
                perturb=str(data.get('perturb', 'test')),
                baseline_reps=int(data.get('baseline_reps', 1)),
                output_dir=output_dir if output_dir is not None else data.get('output_dir'),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid run configuration: {e}")

    def to_canonical(self) -> Dict:
        """Everything that determines the results; output_dir is deliberately absent"""
        lexical = self.corruption.to_dict()
        if self.lexical.get('keyboard_map_path'):
            lexical['keyboard_map_path'] = str(self.lexical['keyboard_map_path'])
        judge = {k: (v.value if hasattr(v, 'value') else v) for k, v in asdict(self.judge).items()}
        return {
            'dataset': str(Path(self.dataset).resolve()),
            'judge': judge,
            'noise': {
                'kinds': [kind.value for kind in self.noise_kinds],
                'snr_schedule_db': list(self.snr_schedule_db),
                'severity_levels': list(self.severity_levels),
                'lexical': lexical,
            },
            'repetitions': self.repetitions,
            'n_context': self.n_context,
            'feature_cap': self.feature_cap,
            'batch_size': self.batch_size,
            'alpha_level': self.alpha_level,
            'master_seed': self.master_seed,
            'split_seed': self.split_seed,
            'min_rows': self.min_rows,
            'perturb': self.perturb,
            'baseline_reps': self.baseline_reps,
        }


@dataclass(frozen=True)
class TrialRecord:
    dataset_id: str
    noise_kind: str
    level_index: int
    severity: Optional[float]
    intensity: float
    rep: int
    metrics: MetricReport
    rng_seed: int
    judge: Dict
    started_at: str = ''
    finished_at: str = ''

    @property
    def cell(self) -> Tuple[str, int, int]:
        return self.noise_kind, self.level_index, self.rep

    @property
    def primary(self) -> float:
        return self.metrics.primary

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['metrics'] = self.metrics.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> 'TrialRecord':
        data = dict(data)
        data['metrics'] = MetricReport.from_dict(data['metrics'])
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class CalibrationVerdict:
    dataset_id: str
    task_kind: str
    primary_metric: str
    results: Dict[str, SlopeTestResult]
    combined: Decision
    run_id: str
    config_hash: str
    n_trials: int
    expected_trials: int
    baseline: Optional[float] = None
    tags: Dict[str, Any] = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return self.n_trials < self.expected_trials

    @property
    def sensitive(self) -> bool:
        return self.combined is Decision.SENSITIVE

    def to_dict(self) -> Dict:
        return {
            'dataset_id': self.dataset_id,
            'task_kind': self.task_kind,
            'primary_metric': self.primary_metric,
            'results': {kind: result.to_dict() for kind, result in self.results.items()},
            'combined': self.combined.value,
            'run_id': self.run_id,
            'config_hash': self.config_hash,
            'n_trials': self.n_trials,
            'expected_trials': self.expected_trials,
            'partial': self.partial,
            'baseline': self.baseline,
            'tags': dict(self.tags),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'CalibrationVerdict':
        return cls(
            dataset_id=data['dataset_id'],
            task_kind=data['task_kind'],
            primary_metric=data['primary_metric'],
            results={kind: SlopeTestResult.from_dict(r) for kind, r in data['results'].items()},
            combined=Decision(data['combined']),
            run_id=data['run_id'],
            config_hash=data['config_hash'],
            n_trials=int(data['n_trials']),
            expected_trials=int(data['expected_trials']),
            baseline=data.get('baseline'),
            tags=dict(data.get('tags') or {}),
        )


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'big')


def cell_seed(master_seed: int, dataset_id: str, noise_kind: str, k: int, r: int) -> int:
    """Seed of cell (k, r); depends on nothing but its arguments"""
    seq = np.random.SeedSequence([master_seed, _stable_int(dataset_id), _stable_int(str(noise_kind)), k, r])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def cell_streams(seed: int, judge_seed: int = 0) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (noise, judge) generators for one cell"""
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    judge_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, judge_seed]))
    return noise_rng, judge_rng


def slope_results(records: Sequence[TrialRecord], noise_kinds: Sequence[NoiseKind],
                  alpha_level: float) -> Dict[str, SlopeTestResult]:
    """Fit and test each noise kind over its (n_k, P_kr) pairs in (k, r) order"""
    results = {}
    for kind in noise_kinds:
        cells = sorted((r for r in records if r.noise_kind == kind.value), key=lambda r: (r.level_index, r.rep))
        observations = [(r.intensity, r.primary) for r in cells]
        results[kind.value] = slope_test(ols_fit(observations), alpha_level)
    return results


def combine(results: Mapping[str, SlopeTestResult]) -> Decision:
    if any(result.sensitive for result in results.values()):
        return Decision.SENSITIVE
    return Decision.INSENSITIVE


@cached('prepared_dataset')
def _prepare_cached(manifest_path: str, mtime_ns: int, split_seed: int, feature_cap: int,
                    min_rows: int) -> PreparedDataset:
    manifest = DatasetManifest.load(manifest_path)
    return prepare_dataset(manifest, split_seed, feature_cap=feature_cap, min_rows=min_rows)


def load_prepared(config: RunConfig) -> PreparedDataset:
    path = Path(config.dataset)
    if not path.exists():
        raise ConfigError(f"Dataset manifest not found: {path}")
    return _prepare_cached(str(path.resolve()), os.stat(path).st_mtime_ns,
                           config.split_seed, config.feature_cap, config.min_rows)


class CalibrationRunner(BaseLockHandler):
    """
    Executes one run: clean baseline, then every (kind, k, r) cell

    Cells run concurrently up to the judge's in-flight bound; each draws its
    randomness from its own seed, so scheduling order never changes results.
    """

    def __init__(self, config: RunConfig, client: Optional[JudgeClient] = None):
        super().__init__(max_in_flight=config.judge.max_in_flight)
        if not config.output_dir:
            raise ConfigError(MESSAGES['MISSING_FIELD'].format(field='output_dir'))
        self.config = config
        self.store = RunStore(config.output_dir)
        self.client = client
        self.header: Optional[Dict] = None
        self.prepared: Optional[PreparedDataset] = None
        self.signal_stats: Optional[SignalStats] = None
        self.few_shot: List[Tuple[Dict, Any]] = []
        self.eval_frame: Optional[pd.DataFrame] = None
        self.truths: List[Any] = []
        self.system_text = ''
        self.logger = logging.getLogger("CalibrationRunner")

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        if self.client is not None:
            await self.client.close()
        self.store.cleanup()
        self.cleanup()

    @property
    def dataset_id(self) -> str:
        return self.prepared.dataset_id

    @property
    def numeric(self) -> bool:
        return self.prepared.manifest.modality != 'text'

    @property
    def batch_size(self) -> int:
        if self.config.batch_size is not None:
            return self.config.batch_size
        return BATCH_SIZES['tabular' if self.numeric else 'text']

    def prepare(self):
        """Set up the run directory and everything shared by all cells"""
        if self.prepared is not None:
            return
        self.header = self.store.setup(self.config.to_canonical())
        self.prepared = load_prepared(self.config)

        for kind in self.config.noise_kinds:
            if kind.is_tabular != self.numeric:
                raise ConfigError(
                    f"Noise kind {kind.value} does not apply to {self.prepared.manifest.modality} dataset "
                    f"{self.dataset_id}"
                )

        task = self.prepared.task
        label = self.prepared.manifest.label_field
        train = self.prepared.split_rows('train')
        features = self.prepared.feature_names

        rng = np.random.default_rng(cell_seed(self.config.master_seed, self.dataset_id, FEW_SHOT_STREAM, 0, 0))
        n_shots = min(self.config.n_context, len(train))
        shot_index = list(rng.choice(train.index.to_numpy(), size=n_shots, replace=False)) if n_shots else []
        cast = str if task.is_classification else float
        self.few_shot = [(train.loc[i].to_dict(), cast(train.loc[i, label])) for i in shot_index]

        if self.config.perturb == 'train':
            self.eval_frame = train.drop(index=shot_index)
        else:
            self.eval_frame = self.prepared.split_rows('test')
        self.truths = [cast(v) for v in self.eval_frame[label]]

        summaries = []
        if self.numeric:
            self.signal_stats = estimate_signal_stats(train, features)
            self.store.write_signal_stats(self.signal_stats.to_dict())
            numeric_train = train[features].astype(float)
            summaries = [
                {'name': name, 'min': numeric_train[name].min(), 'max': numeric_train[name].max(),
                 'mean': numeric_train[name].mean()}
                for name in features
            ]
        self.system_text = build_system_prompt(task, {
            'name': self.dataset_id,
            'description': self.prepared.manifest.description,
            'target': label,
            'feature_summaries': summaries,
        })

        if self.client is None:
            self.client = JudgeClient(self.config.judge, transcript_path=self.store.transcript_path)
        self.logger.info(
            f"{self.dataset_id}: {len(self.eval_frame)} evaluation rows, {len(self.few_shot)} few-shot examples, "
            f"features {features}"
        )

    def completed(self) -> Dict[Tuple[str, int, int], TrialRecord]:
        records = {}
        for data in self.store.load_trials():
            record = TrialRecord.from_dict(data)
            if record.dataset_id == self.dataset_id:
                records[record.cell] = record
        return records

    def _noisy_eval(self, kind: Optional[NoiseKind], scale: float, rng: np.random.Generator) -> pd.DataFrame:
        if kind is None or scale == 0:
            return self.eval_frame
        if kind.is_tabular:
            return perturb_rows(self.eval_frame, self.signal_stats, kind, scale, rng)
        text_field = self.prepared.manifest.text_field
        corrupted = self.eval_frame.copy()
        config = self.config.corruption
        corrupted[text_field] = [corrupt_text(str(text), scale, config, rng) for text in self.eval_frame[text_field]]
        return corrupted

    async def _predict(self, frame: pd.DataFrame, intensity: float,
                       rng: np.random.Generator) -> List[JudgePrediction]:
        spec = self.config.judge
        task = self.prepared.task
        features = self.prepared.feature_names
        rows = frame.to_dict('records')
        ids = [str(i) for i in frame.index]

        if spec.is_simulated:
            return sim_predict(spec, rows, self.truths, intensity, rng, task,
                               few_shot=self.few_shot, features=features,
                               numeric=self.numeric, eval_ids=ids)

        predictions: List[JudgePrediction] = []
        for start in range(0, len(rows), self.batch_size):
            stop = start + self.batch_size
            bundle = build_user_prompt(
                self.few_shot, rows[start:stop], cap=len(features), features=features,
                system_text=self.system_text, eval_ids=ids[start:stop], numeric=self.numeric,
                label_space=task.label_space, reference=self.truths[start:stop],
                char_budget=spec.char_budget,
            )
            predictions.extend(await self.client.predict_batch(bundle, task))
        return predictions

    async def run_cell(self, kind: Optional[NoiseKind], k: int, r: int, severity: Optional[float],
                       intensity: float, scale: float) -> TrialRecord:
        """Evaluate one cell and persist its record"""
        label = kind.value if kind is not None else BASELINE_KIND
        seed = cell_seed(self.config.master_seed, self.dataset_id, label, k, r)
        noise_rng, judge_rng = cell_streams(seed, self.config.judge.seed)

        started = datetime.now(timezone.utc)
        frame = self._noisy_eval(kind, scale, noise_rng)
        predictions = await self._predict(frame, intensity, judge_rng)
        report = score([p.parsed for p in predictions], self.truths, self.prepared.task)
        record = TrialRecord(
            dataset_id=self.dataset_id,
            noise_kind=label,
            level_index=k,
            severity=severity,
            intensity=float(intensity),
            rep=r,
            metrics=report,
            rng_seed=seed,
            judge=self.config.judge.fingerprint(),
            started_at=started.isoformat(),
            finished_at=datetime.now(timezone.utc).isoformat(),
        )
        await self.store.append_trial(record.to_dict())
        self.logger.debug(f"{self.dataset_id} {label} k={k} r={r}: {report.primary_metric}={report.primary:.4f}")
        return record

    async def _guarded_cell(self, *args) -> Optional[TrialRecord]:
        async with self.in_flight():
            try:
                return await self.run_cell(*args)
            except AuthError:
                raise
            except (JudgeError, MetricError, NoiseError) as e:
                kind, k, r = args[0], args[1], args[2]
                self.logger.error(f"{self.dataset_id}: cell {kind.value if kind else BASELINE_KIND} "
                                  f"k={k} r={r} failed: {e}")
                return None

    async def baseline(self) -> MetricReport:
        """Clean evaluation, ``baseline_reps`` times; returns the first repetition"""
        self.prepare()
        done = self.completed()
        for r in range(self.config.baseline_reps):
            if (BASELINE_KIND, 0, r) not in done:
                done[(BASELINE_KIND, 0, r)] = await self.run_cell(None, 0, r, None, 0.0, 0.0)
        report = done[(BASELINE_KIND, 0, 0)].metrics
        self.logger.info(f"{self.dataset_id}: baseline {report.primary_metric} = {report.primary:.4f}")
        return report

    async def calibrate(self) -> CalibrationVerdict:
        """Every pending (kind, k, r) cell, then the slope tests over all persisted records"""
        self.prepare()
        done = self.completed()
        pending = []
        for kind in self.config.noise_kinds:
            for k, (severity, intensity, scale) in enumerate(self.config.levels_for(kind)):
                for r in range(self.config.repetitions):
                    if (kind.value, k, r) not in done:
                        pending.append((kind, k, r, severity, intensity, scale))
        if pending:
            self.logger.info(f"{self.dataset_id}: running {len(pending)} of {self.config.expected_trials()} cells")
            tasks = [asyncio.create_task(self._guarded_cell(*cell)) for cell in pending]
            try:
                await asyncio.gather(*tasks)
            except BaseException:
                for task in tasks:
                    task.cancel()
                await asyncio.gather(*tasks, return_exceptions=True)
                raise

        kinds = {kind.value for kind in self.config.noise_kinds}
        records = [r for r in self.completed().values() if r.noise_kind in kinds]
        expected = self.config.expected_trials()
        if len(records) < PARTIAL_RUN_THRESHOLD * expected:
            raise PartialRun(len(records), expected)

        verdict = self.verdict_from(records)
        self.store.write_verdict(verdict.to_dict())
        self.logger.info(f"{self.dataset_id}: verdict {verdict.combined.value} "
                         f"({', '.join(f'{k}={v.decision.value}' for k, v in verdict.results.items())})")
        if verdict.partial:
            raise PartialRun(len(records), expected, verdict)
        return verdict

    def verdict_from(self, records: Sequence[TrialRecord]) -> CalibrationVerdict:
        results = slope_results(records, self.config.noise_kinds, self.config.alpha_level)
        baseline = self.completed().get((BASELINE_KIND, 0, 0))
        return CalibrationVerdict(
            dataset_id=self.dataset_id,
            task_kind=self.prepared.task.task_kind.value,
            primary_metric=self.prepared.task.primary_metric.value,
            results=results,
            combined=combine(results),
            run_id=self.header['run_id'],
            config_hash=self.header['config_hash'],
            n_trials=len(records),
            expected_trials=self.config.expected_trials(),
            baseline=baseline.primary if baseline is not None else None,
            tags=dict(self.prepared.manifest.tags or {}),
        )

    async def run(self) -> CalibrationVerdict:
        self.prepare()
        stored = self.store.load_verdict()
        if stored is not None and not stored.get('partial'):
            self.logger.info(f"{self.dataset_id}: run {self.header['run_id']} already complete")
            return CalibrationVerdict.from_dict(stored)
        await self.baseline()
        return await self.calibrate()


async def run_baseline(config: RunConfig, client: Optional[JudgeClient] = None) -> MetricReport:
    async with CalibrationRunner(config, client) as runner:
        return await runner.baseline()


async def run_calibration(config: RunConfig, client: Optional[JudgeClient] = None) -> CalibrationVerdict:
    """Baseline plus the full schedule; resumes whatever the run directory already holds"""
    async with CalibrationRunner(config, client) as runner:
        return await runner.run()


async def resume(run_dir, client: Optional[JudgeClient] = None) -> CalibrationVerdict:
    header = RunStore(run_dir).read_header()
    config = RunConfig.from_dict(header['config'], output_dir=str(run_dir))
    return await run_calibration(config, client)


def _metric_title(primary_metric: str) -> str:
    return 'Accuracy' if primary_metric == PrimaryMetric.ACCURACY.value else 'R2'


def _ratio(sensitive: float, insensitive: float) -> float:
    if insensitive == 0:
        return 1.0 if sensitive == 0 else float('inf')
    return sensitive / insensitive


def compare_groups(run_dirs: Sequence, labels: Optional[Mapping[str, Decision]] = None,
                   n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> GroupComparison:
    """
    Clean-baseline performance and variability, sensitive vs insensitive datasets

    Labels default to each run's stored verdict; ``labels`` maps dataset_id to
    a Decision and overrides it. Runs with fewer than two clean trials are skipped.

    Raises:
        EmptyGroup: a group ends up with no datasets
    """
    labels = {k: Decision(v) for k, v in (labels or {}).items()}
    per_dataset = {Decision.SENSITIVE: [], Decision.INSENSITIVE: []}
    primary_metric = None

    for run_dir in discover_runs(run_dirs):
        snapshot = RunStore(run_dir).snapshot()
        clean = sorted((t for t in snapshot.trials if t['noise_kind'] == BASELINE_KIND), key=lambda t: t['rep'])
        if len(clean) < 2:
            logger.warning(f"{run_dir}: {len(clean)} clean trial(s), need at least 2; skipped")
            continue
        dataset_id = clean[0]['dataset_id']
        if dataset_id in labels:
            decision = labels[dataset_id]
        elif snapshot.verdict is not None:
            decision = Decision(snapshot.verdict['combined'])
        else:
            logger.warning(f"{run_dir}: no verdict and no label given; skipped")
            continue
        metric = clean[0]['metrics']['primary_metric']
        if primary_metric is None:
            primary_metric = metric
        elif metric != primary_metric:
            logger.warning(f"{run_dir}: primary metric {metric} differs from {primary_metric}; skipped")
            continue
        per_dataset[decision].append(dispersion([t['metrics']['primary'] for t in clean]))

    sensitive, insensitive = per_dataset[Decision.SENSITIVE], per_dataset[Decision.INSENSITIVE]
    if not sensitive or not insensitive:
        raise EmptyGroup(f"Need both groups (sensitive {len(sensitive)}, insensitive {len(insensitive)})")

    rows = []
    for title, attr in ((_metric_title(primary_metric), 'median'), ('Std Dev', 'std_dev'),
                        ('IQR', 'iqr'), ('Range', 'range')):
        a = [getattr(d, attr) for d in sensitive]
        b = [getattr(d, attr) for d in insensitive]
        boot = bootstrap_median_diff(a, b, n_resamples=n_resamples, seed=seed)
        med_a, med_b = float(np.median(a)), float(np.median(b))
        rows.append(GroupComparisonRow(
            metric=title,
            sensitive=med_a,
            insensitive=med_b,
            ratio=_ratio(med_a, med_b),
            delta_median=boot.delta_median,
            ci_low=boot.ci_low,
            ci_high=boot.ci_high,
        ))

    return GroupComparison(
        rows=rows,
        n_sensitive=len(sensitive),
        n_insensitive=len(insensitive),
        n_resamples=n_resamples,
        ecdf={
            Decision.SENSITIVE.value: ecdf([d.median for d in sensitive]),
            Decision.INSENSITIVE.value: ecdf([d.median for d in insensitive]),
        },
    )
