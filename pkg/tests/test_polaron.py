import numpy as np
import pytest

from npsim.model import SiteNetwork, default_config
from npsim.polaron import (CorrelationKernels, compute_B, compute_R, displacement_profile,
                           free_energy_bound, optimize_frame, tabulate_kernels)
from npsim.spectral import FrequencyGrid, j_combined, reorganization_energy

BETA = 1.0

# bundled-parameter reference constants (chain geometry)
B_REF = np.array([0.87, 0.46, 0.69])
R_REF = np.array([-22.47, -38.30, -24.42])


@pytest.fixture(scope="module")
def config():
    return default_config()


@pytest.fixture(scope="module")
def frame(config):
    return optimize_frame(list(config.spectra), config.network, BETA)


@pytest.fixture(scope="module")
def kernels(frame):
    return tabulate_kernels(frame)


class TestOptimizedFrame:
    def test_renormalization_factors(self, frame):
        np.testing.assert_allclose(frame.B, B_REF, rtol=0.10)

    def test_energy_shifts(self, frame):
        np.testing.assert_allclose(frame.R, R_REF, rtol=0.10)

    def test_reorganization_energies(self, frame):
        np.testing.assert_allclose(frame.Er, [33.8242, 38.7694, 25.9355], rtol=1e-3)

    def test_gradient_converged(self, frame):
        assert frame.grad_norm < 1e-8

    def test_profiles_bounded(self, frame):
        assert np.all(frame.F >= 0.0)
        assert np.all(frame.F <= 1.0)

    def test_factors_in_unit_interval(self, frame):
        assert np.all(frame.B > 0.0)
        assert np.all(frame.B <= 1.0)

    def test_shifts_bounded_by_reorganization(self, frame):
        assert np.all(frame.R <= 0.0)
        assert np.all(frame.R >= -frame.Er - 1e-9)

    def test_renormalized_couplings_symmetric(self, frame):
        np.testing.assert_array_equal(frame.Vt, frame.Vt.T)
        assert frame.Vt[0, 1] == pytest.approx(10.0 * frame.B[0] * frame.B[1])

    def test_free_energy_sandwich(self, frame, config):
        net = config.network
        ones = np.ones_like(frame.F)
        zeros = np.zeros_like(frame.F)
        at_opt = frame.free_energy
        full = free_energy_bound(ones, frame.J, frame.grid, BETA, net.energies, net.couplings)
        weak = free_energy_bound(zeros, frame.J, frame.grid, BETA, net.energies, net.couplings)
        assert at_opt <= full + 1e-9
        assert at_opt <= weak + 1e-9

    def test_decoupled_network_gives_full_polaron(self, config):
        net = SiteNetwork(np.array([20.0, 10.0, 0.0]), np.zeros((3, 3)),
                          trap_site=None, trap_rate=0.0)
        fr = optimize_frame(list(config.spectra), net, BETA)
        assert np.all(np.abs(fr.F - 1.0) < 1e-12)
        np.testing.assert_allclose(fr.R, -fr.Er, rtol=1e-12)


@pytest.fixture(scope="module")
def grid_J(config):
    grid = FrequencyGrid.default_for(list(config.spectra))
    J = j_combined(grid.nodes, config.spectra[0])
    return grid, J


class TestDisplacementMoments:

    def test_zero_profile_gives_unit_factor(self, grid_J):
        grid, J = grid_J
        assert compute_B(np.zeros_like(J), J, grid, BETA) == 1.0
        assert compute_R(np.zeros_like(J), J, grid) == 0.0

    def test_full_profile_recovers_reorganization(self, grid_J, config):
        grid, J = grid_J
        er = reorganization_energy(config.spectra[0], grid, check=False)
        assert compute_R(np.ones_like(J), J, grid) == pytest.approx(-er, rel=1e-12)

    def test_full_polaron_renormalizes_more_than_variational(self, grid_J, frame):
        grid, J = grid_J
        full = compute_B(np.ones_like(J), J, grid, BETA)
        assert 0.0 < full < frame.B[0]

    def test_monotone_under_pointwise_increase(self, grid_J):
        grid, J = grid_J
        rng = np.random.default_rng(5)
        f = rng.uniform(0.1, 0.6, size=J.shape)
        bumped = np.clip(f + rng.uniform(0.0, 0.4, size=J.shape), 0.0, 1.0)
        assert compute_B(bumped, J, grid, BETA) <= compute_B(f, J, grid, BETA)

    def test_colder_bath_increases_factor(self, grid_J):
        grid, J = grid_J
        f = displacement_profile(grid.nodes, 5.0, BETA)
        assert compute_B(f, J, grid, 2.0 * BETA) > compute_B(f, J, grid, BETA)


class TestKernels:
    def test_time_grid(self, kernels):
        assert kernels.s[0] == 0.0
        assert kernels.s_max == pytest.approx(4.0)

    def test_linear_family_real_at_origin(self, kernels):
        for n in range(3):
            k = kernels.pair_kernel(4 * n, 4 * n)
            assert abs(k[0].imag) < 1e-12 * abs(k[0].real)

    def test_linear_family_value_at_origin(self, kernels, frame):
        # independent quadrature of the defining integral at s = 0
        w = frame.grid.nodes
        for n in range(3):
            expected = frame.grid.integrate(
                frame.J[n] * (1 - frame.F[n]) ** 2 / np.tanh(0.5 * BETA * w))
            k = kernels.pair_kernel(4 * n, 4 * n)
            assert k[0].real == pytest.approx(expected, rel=1e-10)

    def test_conjugation_symmetry_at_origin(self, kernels):
        # K(-s) = conj(K(s)) checked through reality of K(0) for every family
        for i, j in kernels.nonzero_pairs():
            k = kernels.pair_kernel(i, j)
            assert abs(k[0].imag) <= 1e-10 * max(1.0, abs(k[0].real))

    def test_tails_decayed(self, kernels):
        assert max(kernels.tail_report.values()) < 1e-3

    def test_chain_excludes_uncoupled_pair(self, kernels):
        # sites 1 and 3 are uncoupled in the chain: no displacement kernels
        idx_13 = 0 * 3 + 2
        idx_31 = 2 * 3 + 0
        assert kernels.pair_kernel(idx_13, idx_31) is None
        assert kernels.pair_kernel(4, idx_13) is None

    def test_weak_frame_kills_displacement_families(self, config, frame):
        from dataclasses import replace
        weak = replace(frame, F=np.zeros_like(frame.F), B=np.ones(3),
                       R=np.zeros(3), theta=np.full(3, np.inf),
                       Vt=config.network.couplings.astype(float))
        k = tabulate_kernels(weak, decay_tol=np.inf)
        assert np.max(np.abs(k.phi)) == 0.0
        assert np.max(np.abs(k.chi)) == 0.0
        assert k.pair_kernel(1, 3) is not None  # displacement pair exists ...
        assert np.max(np.abs(k.pair_kernel(1, 3))) == 0.0  # ... but vanishes

    def test_full_polaron_kills_linear_and_mixed(self, config, frame):
        from dataclasses import replace
        full_B = np.array([compute_B(np.ones_like(frame.J[i]), frame.J[i], frame.grid, BETA)
                           for i in range(3)])
        full = replace(frame, F=np.ones_like(frame.F), B=full_B,
                       R=-frame.Er.copy(), theta=np.zeros(3),
                       Vt=config.network.couplings * np.outer(full_B, full_B))
        k = tabulate_kernels(full, decay_tol=np.inf)
        assert np.max(np.abs(k.ll)) == 0.0
        assert np.max(np.abs(k.chi)) == 0.0
        assert np.max(np.abs(k.pair_kernel(1, 3))) > 0.0

    def test_cross_displacement_toggle(self, frame):
        k = tabulate_kernels(frame, cross_displacement=True)
        # chain: pairs (1,2) and (2,3) share site 2
        idx_12, idx_32 = 0 * 3 + 1, 2 * 3 + 1
        assert kernels_nonzero(k.pair_kernel(idx_12, idx_32))
        base = tabulate_kernels(frame)
        assert base.pair_kernel(idx_12, idx_32) is None


def kernels_nonzero(k):
    return k is not None and np.max(np.abs(k)) > 0.0
