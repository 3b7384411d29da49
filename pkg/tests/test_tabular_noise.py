import numpy as np
import pandas as pd
import pytest

from ext.constants import ConfigError, InsufficientRows, NoiseError, NoiseKind, NonFiniteValue
from ext.tabular_noise import (
    SignalStats,
    SnrSchedule,
    estimate_signal_stats,
    perturb_row,
    perturb_rows,
    sample_noise,
    snr_to_alpha,
)

KNOWN_SIGMA = np.array([
    [4.0, 1.2, 0.6, 0.0],
    [1.2, 1.0, 0.3, 0.2],
    [0.6, 0.3, 2.25, -0.9],
    [0.0, 0.2, -0.9, 1.0],
])


def stats_from(sigma: np.ndarray) -> SignalStats:
    std = np.sqrt(np.diag(sigma))
    return SignalStats(
        feature_names=tuple(f"f{i}" for i in range(len(sigma))),
        variances=np.diag(sigma).copy(),
        correlation=sigma / np.outer(std, std),
        covariance=sigma.copy(),
        n_rows_used=1000,
    )


class TestSnr:
    """dB to noise-power mapping and schedules"""

    def test_reference_levels(self):
        levels = [20, 10, 5, 0, -5, -10]
        expected = [0.01, 0.1, 10 ** -0.5, 1.0, 10 ** 0.5, 10.0]
        for level, alpha in zip(levels, expected):
            assert snr_to_alpha(level) == pytest.approx(alpha, abs=1e-12)

    def test_schedule_intensities(self):
        schedule = SnrSchedule((20.0, 10.0, 5.0, 0.0, -5.0, -10.0))

        assert schedule.intensities == [0.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        assert len(schedule) == 6

    def test_schedule_must_decrease(self):
        with pytest.raises(ConfigError):
            SnrSchedule((0.0, 10.0))


class TestEstimateSignalStats:
    """Clean-train variances, correlation and covariance"""

    def test_two_points(self):
        stats = estimate_signal_stats(np.array([[0.0, 0.0], [2.0, 2.0]]), ['a', 'b'])

        np.testing.assert_allclose(stats.variances, [2.0, 2.0])
        assert stats.correlation[0, 1] == pytest.approx(1.0)

    def test_constant_feature(self):
        frame = pd.DataFrame({'c': [5.0, 5.0, 5.0], 'x': [1.0, 2.0, 4.0]})
        stats = estimate_signal_stats(frame, ['c', 'x'])

        assert stats.variances[0] == 0.0
        assert stats.correlation[0, 0] == 1.0
        assert stats.correlation[0, 1] == 0.0
        assert stats.covariance[0, 1] == 0.0

    def test_independent_columns(self):
        rng = np.random.default_rng(0)
        stats = estimate_signal_stats(rng.standard_normal((100_000, 2)), ['a', 'b'])

        assert abs(stats.correlation[0, 1]) <= 0.02

    def test_single_row(self):
        with pytest.raises(InsufficientRows):
            estimate_signal_stats(np.array([[1.0, 2.0]]), ['a', 'b'])

    def test_non_finite(self):
        with pytest.raises(NonFiniteValue):
            estimate_signal_stats(np.array([[1.0, np.nan], [2.0, 3.0]]), ['a', 'b'])

    def test_rank_deficient_factorizes(self):
        matrix = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        stats = estimate_signal_stats(matrix, ['a', 'b'])

        assert stats.factor.shape == (2, 2)


class TestSampleNoise:
    """Gaussian noise of the right shape and covariance"""

    def test_zero_alpha(self):
        stats = stats_from(KNOWN_SIGMA)
        rng = np.random.default_rng(1)
        for kind in (NoiseKind.UNCORRELATED, NoiseKind.CORRELATED):
            assert np.all(sample_noise(stats, kind, 0.0, rng) == 0.0)
            assert np.all(sample_noise(stats, kind, 0.0, rng, size=5) == 0.0)

    def test_identity_variance(self):
        stats = stats_from(np.eye(3))
        draws = sample_noise(stats, NoiseKind.UNCORRELATED, 0.25, np.random.default_rng(2), size=10_000)

        variances = draws.var(axis=0, ddof=1)
        assert np.all((variances >= 0.225) & (variances <= 0.275))

    def test_correlated_covariance_fidelity(self):
        stats = stats_from(KNOWN_SIGMA)
        draws = sample_noise(stats, NoiseKind.CORRELATED, 0.5, np.random.default_rng(3), size=10_000)

        target = 0.5 * KNOWN_SIGMA
        sample = np.cov(draws, rowvar=False)
        assert np.linalg.norm(sample - target) / np.linalg.norm(target) < 0.10
        np.testing.assert_allclose(np.diag(sample), np.diag(target), rtol=0.10)

    def test_uncorrelated_has_no_cross_correlation(self):
        stats = stats_from(KNOWN_SIGMA)
        draws = sample_noise(stats, NoiseKind.UNCORRELATED, 0.5, np.random.default_rng(4), size=10_000)

        corr = np.corrcoef(draws, rowvar=False)
        off_diagonal = corr[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off_diagonal) <= 0.05)
        np.testing.assert_allclose(draws.var(axis=0, ddof=1), 0.5 * np.diag(KNOWN_SIGMA), rtol=0.10)

    def test_lexical_kind_rejected(self):
        with pytest.raises(NoiseError):
            sample_noise(stats_from(np.eye(2)), NoiseKind.LEXICAL, 0.5, np.random.default_rng(0))

    def test_total_power_grows_with_alpha(self):
        stats = stats_from(KNOWN_SIGMA)
        alphas = [snr_to_alpha(db) for db in (20, 10, 5, 0, -5, -10)]
        for kind in (NoiseKind.UNCORRELATED, NoiseKind.CORRELATED):
            rng = np.random.default_rng(21)
            power = [np.trace(np.cov(sample_noise(stats, kind, alpha, rng, size=10_000), rowvar=False))
                     for alpha in alphas]

            assert all(a < b for a, b in zip(power, power[1:]))

    def test_same_seed_same_draws(self):
        stats = stats_from(KNOWN_SIGMA)
        for kind in (NoiseKind.UNCORRELATED, NoiseKind.CORRELATED):
            first = sample_noise(stats, kind, 0.5, np.random.default_rng(99), size=50)
            second = sample_noise(stats, kind, 0.5, np.random.default_rng(99), size=50)
            other = sample_noise(stats, kind, 0.5, np.random.default_rng(100), size=50)

            assert np.array_equal(first, second)
            assert not np.array_equal(first, other)


class TestPerturb:
    """Row and frame perturbation"""

    def test_zero_alpha_identity(self):
        stats = stats_from(np.eye(2))
        row = {'f0': 1.5, 'f1': -2.0, 'colour': 'red'}

        assert perturb_row(row, stats, NoiseKind.CORRELATED, 0.0, np.random.default_rng(0)) == row

    def test_categorical_preserved(self):
        stats = stats_from(np.eye(2))
        row = {'f0': 1.5, 'f1': -2.0, 'colour': 'red'}
        perturbed = perturb_row(row, stats, NoiseKind.UNCORRELATED, 10.0, np.random.default_rng(0))

        assert perturbed['colour'] == 'red'
        assert perturbed['f0'] != 1.5

    def test_zero_mean(self):
        sigma = np.diag([1.0, 4.0])
        stats = stats_from(sigma)
        alpha = 0.5
        frame = pd.DataFrame({'f0': [1.0] * 10_000, 'f1': [2.0] * 10_000, 'tag': ['x'] * 10_000})
        perturbed = perturb_rows(frame, stats, NoiseKind.UNCORRELATED, alpha, np.random.default_rng(5))

        shift = (perturbed[['f0', 'f1']].to_numpy(dtype=float) - frame[['f0', 'f1']].to_numpy()).mean(axis=0)
        bound = 3 * np.sqrt(alpha * np.diag(sigma) / 10_000)
        assert np.all(np.abs(shift) <= bound)
        assert (perturbed['tag'] == 'x').all()

    def test_missing_feature(self):
        with pytest.raises(NoiseError):
            perturb_row({'f0': 1.0}, stats_from(np.eye(2)), NoiseKind.UNCORRELATED, 1.0, np.random.default_rng(0))
