import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npsim.noise import (NoiseProcess, Trajectory, sample_trajectory, site_offsets,
                         trajectory_seed, value_at)

PROC = NoiseProcess(amplitude=14.0, rate=4.0, pattern=(1, -1, 1))


class TestSampling:
    def test_deterministic_given_seed(self):
        a = sample_trajectory(PROC, 5.0, 1234)
        b = sample_trajectory(PROC, 5.0, 1234)
        assert a.initial_sign == b.initial_sign
        assert np.array_equal(a.flip_times, b.flip_times)

    def test_zero_rate_never_flips(self):
        proc = NoiseProcess(amplitude=14.0, rate=0.0, pattern=(1, -1, 1))
        traj = sample_trajectory(proc, 50.0, 7)
        assert traj.n_flips == 0
        assert traj.initial_sign in (-1, 1)

    def test_flip_times_sorted_within_range(self):
        for seed in range(20):
            traj = sample_trajectory(PROC, 3.0, seed)
            if traj.n_flips:
                assert np.all(np.diff(traj.flip_times) > 0)
                assert traj.flip_times[0] > 0.0
                assert traj.flip_times[-1] <= 3.0

    def test_mean_value_vanishes(self):
        # zero-average process: ensemble mean of alpha(t) at fixed t
        n = 10_000
        t = 1.3
        vals = np.array([value_at(sample_trajectory(PROC, 2.0, trajectory_seed(42, i)), t)
                         for i in range(n)])
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean()) < 3.0 * se

    def test_flip_counts_poisson(self):
        # flips in [0, T] ~ Poisson(nu T / 2)
        n, t_max = 10_000, 2.0
        counts = np.array([sample_trajectory(PROC, t_max, trajectory_seed(3, i)).n_flips
                           for i in range(n)])
        lam = PROC.rate * t_max / 2.0
        mean_se = counts.std(ddof=1) / np.sqrt(n)
        assert abs(counts.mean() - lam) < 3.0 * mean_se
        var_se = np.sqrt((counts.var(ddof=1) ** 2) * 2.0 / (n - 1))
        assert abs(counts.var(ddof=1) - lam) < 3.0 * var_se + 0.05 * lam

    def test_autocorrelation_decay(self):
        # <alpha(t) alpha(t+tau)> = exp(-nu tau)
        n, t0 = 10_000, 0.4
        taus = np.array([0.1, 0.25, 0.5])
        prods = np.zeros((n, len(taus)))
        for i in range(n):
            traj = sample_trajectory(PROC, 1.2, trajectory_seed(99, i))
            a0 = value_at(traj, t0)
            prods[i] = [a0 * value_at(traj, t0 + tau) for tau in taus]
        for k, tau in enumerate(taus):
            target = np.exp(-PROC.rate * tau)
            se = prods[:, k].std(ddof=1) / np.sqrt(n)
            assert abs(prods[:, k].mean() - target) < 3.0 * se

    def test_autocorrelation_log_slope(self):
        n, t0 = 10_000, 0.1
        taus = np.linspace(0.05, 0.5, 8)  # nu*tau in [0.2, 2]
        corr = np.zeros(len(taus))
        for i in range(n):
            traj = sample_trajectory(PROC, 0.8, trajectory_seed(5, i))
            a0 = value_at(traj, t0)
            corr += [a0 * value_at(traj, t0 + tau) for tau in taus]
        corr /= n
        slope = np.polyfit(taus, np.log(corr), 1)[0]
        assert slope == pytest.approx(-PROC.rate, rel=0.05)


class TestValueAt:
    def test_before_first_flip(self):
        traj = Trajectory(1, np.array([1.0, 2.0]), 3.0)
        assert value_at(traj, 0.5) == 1

    def test_between_flips(self):
        traj = Trajectory(1, np.array([1.0, 2.0]), 3.0)
        assert value_at(traj, 1.5) == -1

    def test_right_continuous_at_flip(self):
        traj = Trajectory(1, np.array([1.0, 2.0]), 3.0)
        assert value_at(traj, 1.0) == -1
        assert value_at(traj, 2.0) == 1

    def test_out_of_range_rejected(self):
        traj = Trajectory(1, np.array([1.0]), 2.0)
        with pytest.raises(ValueError):
            value_at(traj, -0.1)
        with pytest.raises(ValueError):
            value_at(traj, 2.1)

    @given(st.integers(min_value=0, max_value=10_000),
           st.floats(min_value=0.0, max_value=5.0, allow_nan=False))
    @settings(max_examples=40, deadline=None)
    def test_value_is_sign_times_parity(self, seed, t):
        traj = sample_trajectory(PROC, 5.0, seed)
        flips_before = int(np.searchsorted(traj.flip_times, t, side="right"))
        assert value_at(traj, t) == traj.initial_sign * (-1) ** flips_before


class TestOffsets:
    def test_pattern_amplitude(self):
        traj = Trajectory(1, np.empty(0), 1.0)
        np.testing.assert_allclose(site_offsets(PROC, traj, 0.3), [14.0, -14.0, 14.0])

    def test_zero_amplitude(self):
        proc = NoiseProcess(amplitude=0.0, rate=4.0, pattern=(1, -1, 1))
        traj = Trajectory(-1, np.empty(0), 1.0)
        np.testing.assert_array_equal(site_offsets(proc, traj, 0.1), np.zeros(3))

    def test_zero_pattern(self):
        proc = NoiseProcess(amplitude=14.0, rate=4.0, pattern=(0, 0, 0))
        traj = Trajectory(1, np.empty(0), 1.0)
        np.testing.assert_array_equal(site_offsets(proc, traj, 0.1), np.zeros(3))

    def test_anticorrelated_sites(self):
        traj = sample_trajectory(PROC, 2.0, 11)
        for t in (0.2, 0.9, 1.7):
            off = site_offsets(PROC, traj, t)
            assert off[0] == off[2] == -off[1]


class TestValidation:
    def test_rejects_bad_pattern(self):
        with pytest.raises(ValueError):
            NoiseProcess(amplitude=1.0, rate=1.0, pattern=(2, 0, 1))

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            NoiseProcess(amplitude=1.0, rate=-1.0, pattern=(1, -1, 1))

    def test_rejects_unsorted_flips(self):
        with pytest.raises(ValueError):
            Trajectory(1, np.array([2.0, 1.0]), 3.0)

    def test_rejects_flips_beyond_horizon(self):
        with pytest.raises(ValueError):
            Trajectory(1, np.array([4.0]), 3.0)
