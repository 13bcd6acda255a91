import numpy as np
import pytest

from npsim.dynamics import evolve
from npsim.ensemble import (HorizonError, average_dynamics, average_trapping_time,
                            convergence_report, steady_state_populations, sweep,
                            transport_efficiency)
from npsim.model import SiteNetwork, default_config
from npsim.noise import NoiseProcess


@pytest.fixture(scope="module")
def rtn_config():
    return default_config(mode="rtn-only")


class TestAverageDynamics:
    def test_single_realization_matches_evolve(self, rtn_config):
        cfg = rtn_config.with_(t_max=2.0, n_realizations=1)
        avg = average_dynamics(cfg)
        from npsim.ensemble import _sample_realization
        series = evolve(None, _sample_realization(cfg, 0, cfg.rng_seed), cfg)
        np.testing.assert_allclose(avg.rho, series.rho, atol=1e-14)

    def test_noise_free_average_is_deterministic(self, rtn_config):
        cfg = rtn_config.with_(t_max=2.0, noise=NoiseProcess(0.0, 4.0, (1, -1, 1)))
        one = average_dynamics(cfg, n_realizations=1)
        many = average_dynamics(cfg, n_realizations=8)
        np.testing.assert_allclose(one.rho, many.rho, atol=1e-14)

    def test_zero_rate_averages_two_branches(self, rtn_config):
        # no flips within the horizon: the ensemble is exactly two branches
        cfg = rtn_config.with_(t_max=2.0, noise=NoiseProcess(14.0, 0.0, (1, -1, 1)))
        avg = average_dynamics(cfg, n_realizations=10)
        from npsim.noise import Trajectory
        plus = evolve(None, Trajectory(1, np.empty(0), 2.0), cfg)
        minus = evolve(None, Trajectory(-1, np.empty(0), 2.0), cfg)
        np.testing.assert_allclose(avg.rho, 0.5 * (plus.rho + minus.rho), atol=1e-13)

    def test_reproducible_across_worker_counts(self, rtn_config):
        cfg = rtn_config.with_(t_max=2.0, n_realizations=24)
        a = average_dynamics(cfg, jobs=1)
        b = average_dynamics(cfg, jobs=2)
        assert np.array_equal(a.rho, b.rho)
        assert np.array_equal(a.pop_se, b.pop_se)

    def test_mean_stays_hermitian_unit_trace(self, rtn_config):
        cfg = rtn_config.with_(t_max=2.0, n_realizations=6,
                               network=SiteNetwork.three_site(trap_site=None, trap_rate=0.0))
        avg = average_dynamics(cfg)
        assert np.max(np.abs(avg.rho - avg.rho.conj().transpose(0, 2, 1))) < 1e-12
        assert np.max(np.abs(avg.trace() - 1.0)) < 1e-9


class TestTransportEfficiency:
    def test_no_trap_population_means_zero(self, rtn_config):
        net = SiteNetwork(np.array([5.0, 0.0, 0.0]),
                          np.array([[0.0, 3.0, 0.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
                          geometry="chain", trap_site=2, trap_rate=0.5)
        cfg = rtn_config.with_(network=net, noise=NoiseProcess(0.0, 0.0, (1, -1, 1)))
        series = evolve(None, None, cfg)
        assert transport_efficiency(series, tu=7.0) == pytest.approx(0.0, abs=1e-12)

    def test_partitions_with_remaining_trace(self, rtn_config):
        series = evolve(None, None, rtn_config.with_(noise=NoiseProcess(0.0, 0.0, (1, -1, 1))))
        eta = transport_efficiency(series, tu=7.0)
        assert 0.0 <= eta <= 1.0 + 5e-3
        assert eta + series.trace()[-1] == pytest.approx(1.0, abs=1e-3)

    def test_requires_coverage(self, rtn_config):
        series = evolve(None, None, rtn_config.with_(t_max=2.0,
                        noise=NoiseProcess(0.0, 0.0, (1, -1, 1))))
        with pytest.raises(ValueError, match="tu"):
            transport_efficiency(series, tu=7.0)

    def test_requires_sink(self, rtn_config):
        cfg = rtn_config.with_(network=SiteNetwork.three_site(trap_site=None, trap_rate=0.0),
                               noise=NoiseProcess(0.0, 0.0, (1, -1, 1)))
        series = evolve(None, None, cfg)
        with pytest.raises(ValueError, match="trapping rate"):
            transport_efficiency(series, tu=7.0)


class TestAverageTrappingTime:
    def test_isolated_trap_site_exponential(self, rtn_config):
        # single populated site with a sink: trace decays as exp(-2 kappa t)
        net = SiteNetwork(np.array([0.0, 5.0]), np.zeros((2, 2)), trap_site=0, trap_rate=0.5)
        cfg = rtn_config.with_(network=net, spectra=rtn_config.spectra[:2],
                               noise=NoiseProcess(0.0, 0.0, (0, 0)), t_max=12.0,
                               initial_site=0)
        series = evolve(None, None, cfg)
        assert average_trapping_time(series) == pytest.approx(1.0, rel=1e-2)

    def test_tail_threshold_insensitive(self, rtn_config):
        cfg = rtn_config.with_(noise=NoiseProcess(0.0, 0.0, (1, -1, 1)), t_max=220.0)
        series = evolve(None, None, cfg, out_stride=10)
        a = average_trapping_time(series, eps_tail=1e-4)
        b = average_trapping_time(series, eps_tail=5e-5)
        assert abs(a - b) < 0.01 * a

    def test_extrapolates_when_tail_not_reached(self, rtn_config):
        short = evolve(None, None, rtn_config.with_(
            noise=NoiseProcess(0.0, 0.0, (1, -1, 1)), t_max=80.0), out_stride=10)
        full = evolve(None, None, rtn_config.with_(
            noise=NoiseProcess(0.0, 0.0, (1, -1, 1)), t_max=220.0), out_stride=10)
        a = average_trapping_time(short)
        b = average_trapping_time(full)
        assert a == pytest.approx(b, rel=0.05)

    def test_insufficient_horizon_raises(self, rtn_config):
        cfg = rtn_config.with_(noise=NoiseProcess(0.0, 0.0, (1, -1, 1)), t_max=1.0)
        series = evolve(None, None, cfg)
        with pytest.raises(HorizonError, match="t_max"):
            average_trapping_time(series)


class TestSteadyState:
    def test_populations_sum_to_one(self, rtn_config):
        cfg = rtn_config.with_(network=SiteNetwork.three_site(trap_site=None, trap_rate=0.0),
                               t_max=3.0, n_realizations=10)
        pops = steady_state_populations(cfg, 3.0)
        assert pops.sum() == pytest.approx(1.0, abs=1e-4)

    def test_rejects_sink(self, rtn_config):
        with pytest.raises(ValueError, match="sink"):
            steady_state_populations(rtn_config, 3.0)


class TestConvergenceReport:
    def test_reference_checkpoint_is_exact(self, rtn_config):
        cfg = rtn_config.with_(t_max=1.0, n_realizations=8)
        report = convergence_report(cfg, [4, 8])
        assert report[8] == 0.0
        assert report[4] >= 0.0

    def test_noise_free_deviations_vanish(self, rtn_config):
        cfg = rtn_config.with_(t_max=1.0, noise=NoiseProcess(0.0, 4.0, (1, -1, 1)))
        report = convergence_report(cfg, [2, 6])
        assert report[2] == pytest.approx(0.0, abs=1e-14)

    def test_monte_carlo_scaling(self, rtn_config):
        # deviations shrink ~1/sqrt(m); single experiments are noisy, so the
        # ratio is averaged over repeated master seeds
        ratios = []
        for seed in (1, 7, 11, 42, 99, 2026):
            cfg = rtn_config.with_(t_max=1.0, rng_seed=seed)
            report = convergence_report(cfg, [25, 100, 400])
            ratios.append(report[100] / report[25])
        mean_ratio = np.mean(ratios)
        assert 0.25 <= mean_ratio <= 1.0


class TestSweep:
    def test_single_cell_matches_direct_average(self, rtn_config):
        cfg = rtn_config.with_(t_max=7.0)
        grid = sweep(cfg, [14.0], [4.0], metric="eta", n_realizations=8)
        assert grid.values.shape == (1, 1)
        from npsim.ensemble import _cell_seed
        direct_cfg = cfg.with_(rng_seed=_cell_seed(cfg.rng_seed, 0, 0),
                               noise=NoiseProcess(14.0, 4.0, (1, -1, 1)), n_realizations=8)
        avg = average_dynamics(direct_cfg, out_stride=10)
        eta = 2 * 0.5 * avg.site_integrals[-1, 2]
        assert grid.values[0, 0] == pytest.approx(eta, abs=1e-12)

    def test_bit_reproducible_across_jobs(self, rtn_config):
        cfg = rtn_config.with_(t_max=7.0)
        a = sweep(cfg, [0.0, 14.0], [4.0], metric="eta", n_realizations=8, jobs=1)
        b = sweep(cfg, [0.0, 14.0], [4.0], metric="eta", n_realizations=8, jobs=2)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.stderr, b.stderr)

    def test_efficiency_within_bounds(self, rtn_config):
        grid = sweep(rtn_config, [0.0, 14.0], [0.1, 4.0], metric="eta", n_realizations=8)
        assert np.all(grid.values >= 0.0)
        assert np.all(grid.values <= 1.0 + 5e-3)

    def test_trapping_time_positive(self, rtn_config):
        grid = sweep(rtn_config.with_(t_max=7.0), [14.0], [4.0], metric="ttime",
                     n_realizations=4, t_max_metric=60.0)
        assert grid.values[0, 0] > 0.0

    def test_steady_state_metric_drops_sink(self, rtn_config):
        grid = sweep(rtn_config, [14.0], [4.0], metric="pss", n_realizations=4, t_ss=2.0)
        assert 0.0 <= grid.values[0, 0] <= 1.0

    def test_rows_schema(self, rtn_config):
        grid = sweep(rtn_config, [0.0], [4.0], metric="eta", n_realizations=2)
        rows = list(grid.rows())
        assert len(rows) == 1
        omega, nu, value, stderr, n_real, seed = rows[0]
        assert (omega, nu, n_real) == (0.0, 4.0, 2)
        assert isinstance(seed, int)

    def test_rejects_unknown_metric(self, rtn_config):
        with pytest.raises(ValueError, match="metric"):
            sweep(rtn_config, [1.0], [1.0], metric="bogus")
