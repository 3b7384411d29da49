import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .constants import (
    BOOTSTRAP_RESAMPLES,
    DEFAULT_ALPHA_LEVEL,
    QUANTILE_XTOL,
    Decision,
    DegenerateDesign,
    EmptyGroup,
    InvalidDf,
    InvalidProbability,
    StatsError,
)

logger = logging.getLogger(__name__)

# SS_res at or below this fraction of SS_tot counts as an exact fit
PERFECT_FIT_RTOL = 1e-20
BOOTSTRAP_CHUNK = 1000


@dataclass(frozen=True)
class OlsFit:
    beta0: float
    beta1: float
    se_beta1: float
    t_stat: float
    p_one_sided: float
    df: int
    n_obs: int
    residual_variance: float

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'OlsFit':
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SlopeTestResult:
    fit: OlsFit
    alpha_level: float
    t_crit: float
    decision: Decision

    @property
    def sensitive(self) -> bool:
        return self.decision is Decision.SENSITIVE

    def to_dict(self) -> Dict:
        return {
            'fit': self.fit.to_dict(),
            'alpha_level': self.alpha_level,
            't_crit': self.t_crit,
            'decision': self.decision.value,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'SlopeTestResult':
        return cls(
            fit=OlsFit.from_dict(data['fit']),
            alpha_level=float(data['alpha_level']),
            t_crit=float(data['t_crit']),
            decision=Decision(data['decision']),
        )


@dataclass(frozen=True)
class BootstrapResult:
    delta_median: float
    ci_low: float
    ci_high: float
    n_resamples: int


@dataclass(frozen=True)
class Dispersion:
    median: float
    std_dev: float
    iqr: float
    range: float
    single_value: bool = False


@dataclass(frozen=True)
class GroupComparisonRow:
    metric: str
    sensitive: float
    insensitive: float
    ratio: float
    delta_median: float
    ci_low: float
    ci_high: float


@dataclass
class GroupComparison:
    rows: List[GroupComparisonRow]
    n_sensitive: int
    n_insensitive: int
    n_resamples: int = BOOTSTRAP_RESAMPLES
    ecdf: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)

    def row(self, metric: str) -> GroupComparisonRow:
        for row in self.rows:
            if row.metric == metric:
                return row
        raise KeyError(metric)

    def to_dict(self) -> Dict:
        return {
            'rows': [asdict(r) for r in self.rows],
            'n_sensitive': self.n_sensitive,
            'n_insensitive': self.n_insensitive,
            'n_resamples': self.n_resamples,
        }


def _check_df(df) -> float:
    if df is None or not np.isfinite(df) or df < 1:
        raise InvalidDf(f"degrees of freedom must be >= 1 (got {df})")
    return float(df)


def student_t_cdf(t: float, df) -> float:
    """Lower-tail Student-t CDF through the regularized incomplete beta function"""
    df = _check_df(df)
    if math.isnan(t):
        raise StatsError("t is NaN")
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t < 0 else 1.0 - tail


def student_t_quantile(p: float, df) -> float:
    """Inverse CDF by bracketed root-finding on student_t_cdf"""
    df = _check_df(df)
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"p must be in (0, 1) (got {p})")
    if p == 0.5:
        return 0.0

    lo, hi = -1.0, 1.0
    while student_t_cdf(lo, df) > p:
        lo *= 2.0
    while student_t_cdf(hi, df) < p:
        hi *= 2.0
    return float(brentq(lambda x: student_t_cdf(x, df) - p, lo, hi,
                        xtol=QUANTILE_XTOL, maxiter=500))


def ols_fit(observations: Sequence[Tuple[float, float]]) -> OlsFit:
    """
    Fit P = beta0 + beta1·n by least squares and compute the slope t-statistic

    Exact fits (SS_res = 0) get SE = 0 and t = ±inf; a flat response gets
    beta1 = t = 0 and p = 0.5.
    """
    data = np.asarray(observations, dtype=float).reshape(-1, 2)
    x, y = data[:, 0], data[:, 1]
    n = len(x)
    if n < 3:
        raise DegenerateDesign(f"Need at least 3 observations, got {n}")
    if not np.all(np.isfinite(data)):
        raise StatsError("Observations must be finite")

    x_mean, y_mean = x.mean(), y.mean()
    sxx = float(np.sum((x - x_mean) ** 2))
    if sxx == 0:
        raise DegenerateDesign("All intensities are equal")
    sxy = float(np.sum((x - x_mean) * (y - y_mean)))
    syy = float(np.sum((y - y_mean) ** 2))

    beta1 = sxy / sxx
    beta0 = float(y_mean - beta1 * x_mean)
    residuals = y - (beta0 + beta1 * x)
    ss_res = float(np.sum(residuals ** 2))
    df = n - 2
    residual_variance = ss_res / df

    if syy == 0:
        return OlsFit(beta0, 0.0, 0.0, 0.0, 0.5, df, n, 0.0)
    if ss_res <= PERFECT_FIT_RTOL * syy:
        if beta1 == 0:
            raise DegenerateDesign("Exact fit with zero slope")
        t_stat = -math.inf if beta1 < 0 else math.inf
        return OlsFit(beta0, beta1, 0.0, t_stat, 0.0 if beta1 < 0 else 1.0, df, n, 0.0)

    se = math.sqrt(residual_variance / sxx)
    t_stat = beta1 / se
    return OlsFit(beta0, beta1, se, t_stat, student_t_cdf(t_stat, df), df, n, residual_variance)


def slope_test(fit: OlsFit, alpha_level: float = DEFAULT_ALPHA_LEVEL) -> SlopeTestResult:
    """One-sided test of H0: beta1 >= 0 against H1: beta1 < 0"""
    t_crit = student_t_quantile(alpha_level, fit.df)
    decision = Decision.SENSITIVE if fit.t_stat < t_crit else Decision.INSENSITIVE
    return SlopeTestResult(fit=fit, alpha_level=alpha_level, t_crit=t_crit, decision=decision)


def bootstrap_median_diff(group_a: Sequence[float], group_b: Sequence[float],
                          n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0,
                          confidence: float = 0.95) -> BootstrapResult:
    """
    Percentile CI of median(A*) - median(B*) with A and B resampled independently

    Raises:
        EmptyGroup: either group has no values
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise EmptyGroup(f"Groups must be non-empty (sizes {len(a)}, {len(b)})")

    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for start in range(0, n_resamples, BOOTSTRAP_CHUNK):
        stop = min(start + BOOTSTRAP_CHUNK, n_resamples)
        rows = stop - start
        med_a = np.median(a[rng.integers(0, len(a), size=(rows, len(a)))], axis=1)
        med_b = np.median(b[rng.integers(0, len(b), size=(rows, len(b)))], axis=1)
        stats[start:stop] = med_a - med_b

    tail = (1.0 - confidence) / 2.0 * 100.0
    ci_low, ci_high = np.percentile(stats, [tail, 100.0 - tail])
    return BootstrapResult(
        delta_median=float(np.median(a) - np.median(b)),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        n_resamples=n_resamples,
    )


def dispersion(values: Sequence[float]) -> Dispersion:
    """Median, sample std (n-1), IQR (linear interpolation) and range"""
    data = np.asarray(values, dtype=float)
    if len(data) == 0:
        raise EmptyGroup("dispersion needs at least one value")
    q1, median, q3 = np.percentile(data, [25, 50, 75], method='linear')
    single = len(data) == 1
    return Dispersion(
        median=float(median),
        std_dev=0.0 if single else float(np.std(data, ddof=1)),
        iqr=float(q3 - q1),
        range=float(data.max() - data.min()),
        single_value=single,
    )


def ecdf(values: Sequence[float]) -> List[Tuple[float, float]]:
    """Right-continuous step function as (value, cumulative fraction) pairs"""
    data = np.asarray(values, dtype=float)
    if len(data) == 0:
        raise EmptyGroup("ecdf needs at least one value")
    unique, counts = np.unique(data, return_counts=True)
    fractions = np.cumsum(counts) / len(data)
    return [(float(v), float(f)) for v, f in zip(unique, fractions)]


def ecdf_evaluate(steps: Sequence[Tuple[float, float]], x: float) -> float:
    fraction = 0.0
    for value, cumulative in steps:
        if value > x:
            break
        fraction = cumulative
    return fraction


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, float, float, Optional[float]]:
    """
    Pointwise t-interval of the mean

    Returns:
        (mean, ci_low, ci_high, sd); a single value collapses the interval to the mean
    """
    data = np.asarray(values, dtype=float)
    mean = float(data.mean())
    if len(data) < 2:
        return mean, mean, mean, None
    sd = float(np.std(data, ddof=1))
    half = student_t_quantile(0.5 + confidence / 2.0, len(data) - 1) * sd / math.sqrt(len(data))
    return mean, mean - half, mean + half, sd
