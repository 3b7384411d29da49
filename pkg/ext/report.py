import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import pandas as pd

from run_store import RunSnapshot, RunStore, discover_runs

from .constants import (
    BASELINE_KIND,
    BOOTSTRAP_RESAMPLES,
    MESSAGES,
    P_VALUE_FLOOR,
    Decision,
    EmptyGroup,
    NoiseKind,
    NoRunsFound,
)
from .protocol import compare_groups
from .stats import GroupComparison, SlopeTestResult, mean_ci

logger = logging.getLogger(__name__)

SLOPE_TABLE_FILE = 'slope_table.csv'
CURVES_FILE = 'curves.csv'
GROUP_COMPARISON_FILE = 'group_comparison.csv'
ECDF_FILE = 'ecdf.csv'
ACROSS_CHOICES = ('runs', 'datasets')

DECISION_LABELS = {Decision.SENSITIVE: 'Reject H0', Decision.INSENSITIVE: 'Fail to reject'}


def format_beta(beta1: float) -> str:
    return f"{beta1:.4f}"


def format_p(p: float) -> str:
    """'<1e-10' below the floor, 4 decimals down to 1e-4, scientific below that"""
    if p < P_VALUE_FLOOR:
        return '<1e-10'
    if p >= 1e-4:
        return f"{p:.4f}"
    return f"{p:.2e}"


def format_fraction(count: int, total: int) -> str:
    if total == 0:
        return '0/0 (n/a)'
    return f"{count}/{total} ({100.0 * count / total:.1f}%)"


def load_completed_runs(paths: Sequence) -> List[RunSnapshot]:
    """
    Snapshots of every run under ``paths`` that has a verdict

    Raises:
        NoRunsFound: nothing completed was found
    """
    snapshots = []
    for run_dir in discover_runs(paths):
        snapshot = RunStore(run_dir).snapshot()
        if snapshot.completed:
            snapshots.append(snapshot)
        else:
            logger.warning(f"{run_dir}: no verdict yet; skipped")
    if not snapshots:
        raise NoRunsFound(MESSAGES['NO_RUNS'].format(paths=', '.join(map(str, paths))))
    return sorted(snapshots, key=lambda s: (s.verdict['dataset_id'], s.run_id))


def slope_table(snapshots: Iterable[RunSnapshot]) -> pd.DataFrame:
    """One row per (run, noise kind), rendered straight from the stored verdicts"""
    rows = []
    for snapshot in snapshots:
        for kind, data in sorted(snapshot.verdict['results'].items()):
            result = SlopeTestResult.from_dict(data)
            rows.append({
                'dataset': snapshot.verdict['dataset_id'],
                'noise_kind': kind,
                'beta1': format_beta(result.fit.beta1),
                'p_one_sided': format_p(result.fit.p_one_sided),
                'df': result.fit.df,
                'decision': DECISION_LABELS[result.decision],
            })
    return pd.DataFrame(rows, columns=['dataset', 'noise_kind', 'beta1', 'p_one_sided', 'df', 'decision'])


def _noise_trials(snapshot: RunSnapshot) -> List[Dict]:
    trials = [t for t in snapshot.trials if t['noise_kind'] != BASELINE_KIND]
    return sorted(trials, key=lambda t: (t['noise_kind'], t['level_index'], t['rep']))


def _level_groups(snapshot: RunSnapshot) -> Dict:
    levels = defaultdict(list)
    for trial in _noise_trials(snapshot):
        levels[(trial['noise_kind'], trial['level_index'])].append(trial)
    return levels


def _curve_row(group: str, dataset: str, kind: str, k: int, trials: List[Dict], values: List[float]) -> Dict:
    mean, low, high, sd = mean_ci(values)
    return {
        'group': group,
        'dataset': dataset,
        'noise_kind': kind,
        'level_index': k,
        'severity': trials[0]['severity'],
        'x': trials[0]['intensity'],
        'n': len(values),
        'mean': mean,
        'sd': sd if sd is not None else math.nan,
        'ci_low': low,
        'ci_high': high,
    }


def curves(snapshots: Sequence[RunSnapshot], across: str = 'runs') -> pd.DataFrame:
    """
    Per-level mean performance with a pointwise 95% t-interval

    ``across='runs'`` aggregates the repetitions of each run; ``across='datasets'``
    aggregates per-run level means across runs, grouped by verdict; runs whose
    schedules differ at a level index get separate rows.
    """
    if across not in ACROSS_CHOICES:
        raise ValueError(f"across must be one of {ACROSS_CHOICES}")
    rows = []
    if across == 'runs':
        for snapshot in snapshots:
            dataset = snapshot.verdict['dataset_id']
            for (kind, k), trials in sorted(_level_groups(snapshot).items()):
                values = [t['metrics']['primary'] for t in trials]
                rows.append(_curve_row(snapshot.verdict['combined'], dataset, kind, k, trials, values))
    else:
        pooled = defaultdict(list)
        for snapshot in snapshots:
            for (kind, k), trials in _level_groups(snapshot).items():
                level_mean = sum(t['metrics']['primary'] for t in trials) / len(trials)
                # Runs pool only where their levels agree, not just their indices
                level = (trials[0]['severity'], trials[0]['intensity'])
                pooled[(snapshot.verdict['combined'], kind, k, level)].append((trials, level_mean))
        for (group, kind, k, _), entries in sorted(pooled.items()):
            rows.append(_curve_row(group, 'ALL', kind, k, entries[0][0], [m for _, m in entries]))
    columns = ['group', 'dataset', 'noise_kind', 'level_index', 'severity', 'x', 'n', 'mean', 'sd', 'ci_low', 'ci_high']
    return pd.DataFrame(rows, columns=columns)


def group_comparison_frame(comparison: GroupComparison) -> pd.DataFrame:
    rows = [{
        'Metric': row.metric,
        'Sensitive': f"{row.sensitive:.4f}",
        'Insensitive': f"{row.insensitive:.4f}",
        'Ratio': f"{row.ratio:.2f}",
        'Δ Median': f"{row.delta_median:.4f}",
        '95% Bootstrap CI': f"[{row.ci_low:.4f}, {row.ci_high:.4f}]",
    } for row in comparison.rows]
    return pd.DataFrame(rows, columns=['Metric', 'Sensitive', 'Insensitive', 'Ratio', 'Δ Median', '95% Bootstrap CI'])


def ecdf_frame(comparison: GroupComparison) -> pd.DataFrame:
    rows = [{'x': x, 'y': y, 'group': group}
            for group, steps in sorted(comparison.ecdf.items()) for x, y in steps]
    return pd.DataFrame(rows, columns=['x', 'y', 'group'])


def write_analysis(paths: Sequence, out_dir, across: str = 'runs',
                   n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> Dict[str, Path]:
    """
    Emit slope_table.csv and curves.csv, plus group_comparison.csv and ecdf.csv
    when both verdict groups have clean-baseline repetitions

    Only persisted files are read, so re-running yields byte-identical CSVs.
    """
    snapshots = load_completed_runs(paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = {}
    frames = {SLOPE_TABLE_FILE: slope_table(snapshots), CURVES_FILE: curves(snapshots, across)}
    try:
        comparison = compare_groups([s.run_dir for s in snapshots], n_resamples=n_resamples, seed=seed)
        frames[GROUP_COMPARISON_FILE] = group_comparison_frame(comparison)
        frames[ECDF_FILE] = ecdf_frame(comparison)
    except EmptyGroup as e:
        logger.warning(f"Group comparison skipped: {e}")

    for name, frame in frames.items():
        path = out / name
        frame.to_csv(path, index=False, lineterminator='\n')
        written[name] = path
        logger.info(f"Wrote {path} ({len(frame)} rows)")
    return written


def _tabular_breakdown(verdicts: List[Dict]) -> Optional[str]:
    """Sensitive runs split by which Gaussian noise kind(s) rejected"""
    both = corr = unc = 0
    tested = 0
    for verdict in verdicts:
        results = verdict['results']
        if NoiseKind.CORRELATED.value not in results or NoiseKind.UNCORRELATED.value not in results:
            continue
        tested += 1
        c = results[NoiseKind.CORRELATED.value]['decision'] == Decision.SENSITIVE.value
        u = results[NoiseKind.UNCORRELATED.value]['decision'] == Decision.SENSITIVE.value
        both += c and u
        corr += c and not u
        unc += u and not c
    if not tested:
        return None
    return f"Both {both} | Corr. only {corr} | Unc. only {unc} (of {tested})"


def _fraction_line(label: str, verdicts: List[Dict]) -> str:
    sensitive = sum(v['combined'] == Decision.SENSITIVE.value for v in verdicts)
    return f"{label}: {format_fraction(sensitive, len(verdicts))} sensitive"


def summary_lines(snapshots: Sequence[RunSnapshot], by_tag: Optional[str] = None) -> List[str]:
    """Human-readable verdicts plus sensitive fractions per task kind"""
    verdicts = [s.verdict for s in snapshots]
    lines = ["Verdicts:"]
    for verdict in verdicts:
        details = ', '.join(
            f"{kind} β1={format_beta(r['fit']['beta1'])} p={format_p(r['fit']['p_one_sided'])}"
            for kind, r in sorted(verdict['results'].items())
        )
        flag = ' [partial]' if verdict.get('partial') else ''
        lines.append(f"  {verdict['dataset_id']} ({verdict['task_kind']}): {verdict['combined']}{flag} - {details}")

    lines.append("")
    by_task = defaultdict(list)
    for verdict in verdicts:
        by_task[verdict['task_kind']].append(verdict)
    for task_kind in sorted(by_task):
        lines.append(_fraction_line(task_kind, by_task[task_kind]))
        breakdown = _tabular_breakdown(by_task[task_kind])
        if breakdown:
            lines.append(f"  {breakdown}")

    if by_tag:
        lines.append("")
        lines.append(f"By {by_tag}:")
        by_value = defaultdict(list)
        for verdict in verdicts:
            by_value[str((verdict.get('tags') or {}).get(by_tag, 'untagged'))].append(verdict)
        for value in sorted(by_value):
            lines.append(f"  {_fraction_line(value, by_value[value])}")
    return lines
