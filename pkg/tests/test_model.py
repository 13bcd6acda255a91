import numpy as np
import pytest

from npsim.model import (ConfigError, SimConfig, SiteNetwork, build_system_hamiltonian,
                         default_config, load_config)
from npsim.noise import NoiseProcess


class TestSiteNetwork:
    def test_three_site_chain_default(self):
        net = SiteNetwork.three_site()
        assert net.n_sites == 3
        np.testing.assert_array_equal(net.energies, [20.0, 10.0, 0.0])
        assert net.couplings[0, 2] == 0.0

    def test_ring_closes_loop(self):
        net = SiteNetwork.three_site(geometry="ring")
        assert net.couplings[0, 2] == net.couplings[0, 1] == 10.0

    def test_chain_and_ring_differ_only_in_corner(self):
        chain = SiteNetwork.three_site().couplings
        ring = SiteNetwork.three_site(geometry="ring").couplings
        diff = ring - chain
        expected = np.zeros((3, 3))
        expected[0, 2] = expected[2, 0] = 10.0
        np.testing.assert_array_equal(diff, expected)

    def test_rejects_asymmetric_couplings(self):
        v = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        with pytest.raises(ConfigError, match="symmetric"):
            SiteNetwork(np.array([1.0, 0.0, 0.0]), v)

    def test_rejects_chain_with_corner_coupling(self):
        v = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        with pytest.raises(ConfigError, match="chain"):
            SiteNetwork(np.zeros(3), v, geometry="chain")

    def test_trap_rate_requires_site(self):
        with pytest.raises(ConfigError, match="trap"):
            SiteNetwork.three_site(trap_site=None, trap_rate=0.5)


class TestHamiltonian:
    def test_default_chain_matrix(self):
        h = build_system_hamiltonian(SiteNetwork.three_site(), np.zeros(3))
        np.testing.assert_array_equal(np.diag(h).real, [20.0, 10.0, 0.0])
        assert h[0, 1] == h[1, 2] == 10.0
        assert h[0, 2] == 0.0

    def test_offsets_shift_diagonal(self):
        h = build_system_hamiltonian(SiteNetwork.three_site(), np.array([14.0, -14.0, 14.0]))
        np.testing.assert_array_equal(np.diag(h).real, [34.0, -4.0, 14.0])

    def test_decoupled_sites_are_eigenstates(self):
        net = SiteNetwork(np.array([3.0, 1.0]), np.zeros((2, 2)))
        h = build_system_hamiltonian(net, np.zeros(2))
        np.testing.assert_allclose(np.linalg.eigvalsh(h), [1.0, 3.0])

    def test_exactly_hermitian(self):
        h = build_system_hamiltonian(SiteNetwork.three_site(geometry="ring"),
                                     np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(h, h.conj().T)

    def test_rejects_wrong_offset_count(self):
        with pytest.raises(ConfigError, match="rtn_values"):
            build_system_hamiltonian(SiteNetwork.three_site(), np.zeros(2))


class TestLoadConfig:
    def test_bundled_defaults(self):
        cfg = default_config()
        assert cfg.network.n_sites == 3
        np.testing.assert_array_equal(cfg.network.energies, [20.0, 10.0, 0.0])
        assert cfg.spectra[1].omega_c == pytest.approx(20.0 / 3.0)
        assert cfg.spectra[1].lam == 15.0
        assert cfg.kT == 1.0
        assert cfg.noise.amplitude == 14.0
        assert cfg.noise.rate == 4.0
        assert cfg.noise.pattern == (1, -1, 1)
        assert cfg.network.trap_site == 2
        assert cfg.network.trap_rate == 0.5
        assert cfg.initial_site == 0

    def test_missing_file_errors(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/path.cfg")

    def test_geometry_coupling_consistency(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("geometry = chain\ncouplings = 0,10,10; 10,0,10; 10,10,0\n")
        with pytest.raises(ConfigError, match="chain"):
            load_config(path)

    def test_default_seed_filled(self, tmp_path):
        path = tmp_path / "minimal.cfg"
        path.write_text("t_max = 5.0\n")
        cfg = load_config(path)
        assert cfg.rng_seed == default_config().rng_seed
        assert cfg.t_max == 5.0

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "extra.cfg"
        path.write_text("quux = 1\n")
        with pytest.raises(ConfigError, match="quux"):
            load_config(path)

    def test_overrides(self):
        cfg = default_config(geometry="ring", noise_amplitude=3.0, mode="rtn-only")
        assert cfg.network.geometry == "ring"
        assert cfg.noise.amplitude == 3.0
        assert cfg.mode == "rtn-only"

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "broken.cfg"
        path.write_text("this line has no equals\n")
        with pytest.raises(ConfigError, match="broken.cfg:1"):
            load_config(path)


class TestSimConfigValidation:
    def test_step_safety_bound(self):
        with pytest.raises(ConfigError, match="dt"):
            default_config(dt=0.1)

    def test_initial_site_range(self):
        with pytest.raises(ConfigError, match="initial_site"):
            default_config(initial_site=4)

    def test_mode_choices(self):
        with pytest.raises(ConfigError, match="mode"):
            default_config(mode="other")

    def test_noise_pattern_length(self):
        cfg = default_config()
        with pytest.raises(ConfigError, match="noise_pattern"):
            cfg.with_(noise=NoiseProcess(1.0, 1.0, (1, -1)))

    def test_beta_inverse_temperature(self):
        assert default_config(kT=2.0).beta == 0.5
