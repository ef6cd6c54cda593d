"""Array responses, visible regions, path sampling and pilot observation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ris.geometry import (SPEED_OF_LIGHT, MarkovVRPrior, PathLossModel, SystemGeometry,
                                 VisibleRegion, element_distances, far_field_arv, fresnel_arv_curv,
                                 near_field_arv, noiseless_pilots, observe, sample_paths, sample_vr,
                                 synthesize_channel)

PAPER = SystemGeometry(M=16, N=128, K=8)


class TestSystemGeometry:
    def test_paper_scale_distances(self):
        assert PAPER.rayleigh_distance == pytest.approx(87.5, rel=0.02)
        assert PAPER.bs_range == pytest.approx(95.2, rel=0.02)

    def test_half_wavelength_default(self):
        g = SystemGeometry.from_frequency(28e9)
        assert g.d == pytest.approx(SPEED_OF_LIGHT / 28e9 / 2)

    def test_regimes(self):
        assert PAPER.is_near_field(15.0)
        assert PAPER.is_far_field(PAPER.bs_range)

    @pytest.mark.parametrize("kw", [dict(N=30, K=4), dict(M=0), dict(user_range=(5.0, 1.0)),
                                    dict(d=-1.0)])
    def test_rejects_bad_config(self, kw):
        with pytest.raises(ValueError):
            SystemGeometry(**kw)


class TestArrayResponses:
    def test_far_field_reference_element(self):
        a = far_field_arv(8, 0.3, 0.5, 1.0)
        assert a[0] == 1
        np.testing.assert_allclose(np.abs(a), 1)

    def test_far_field_broadside_is_ones(self):
        np.testing.assert_allclose(far_field_arv(5, 0.0, 0.5, 1.0), 1)

    def test_far_field_phase_progression(self):
        a = far_field_arv(4, 0.5, 0.5, 1.0)
        np.testing.assert_allclose(a, np.exp(-1j * np.pi * 0.5 * np.arange(4)))

    def test_angle_out_of_range(self):
        with pytest.raises(ValueError):
            far_field_arv(4, 1.2, 0.5, 1.0)
        with pytest.raises(ValueError):
            near_field_arv(4, 1.2, 5.0, 0.5, 1.0)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            near_field_arv(4, 0.1, 0.0, 0.5, 1.0)

    def test_distances_against_geometry(self):
        r, th, d = 7.0, 0.4, 0.25
        src = np.array([r * th, r * np.sqrt(1 - th**2)])
        expected = [np.linalg.norm(src - [n * d, 0]) for n in range(6)]
        np.testing.assert_allclose(element_distances(6, th, r, d), expected)

    def test_near_field_tends_to_far_field(self):
        g = PAPER
        a = near_field_arv(g.N, 0.2, 1e7, g.d, g.wavelength)
        np.testing.assert_allclose(a, far_field_arv(g.N, 0.2, g.d, g.wavelength), atol=1e-3)

    def test_fresnel_close_to_exact_beyond_aperture(self):
        g = SystemGeometry(M=4, N=32, K=4)
        ex = near_field_arv(g.N, 0.3, 10.0, g.d, g.wavelength, "exact")
        fr = near_field_arv(g.N, 0.3, 10.0, g.d, g.wavelength, "fresnel")
        assert abs(np.vdot(ex, fr)) / g.N > 0.999

    def test_curvature_parameterisation_matches_fresnel(self):
        g = PAPER
        th, r = -0.45, 12.0
        a = fresnel_arv_curv(g.N, th, (1 - th**2) / r, g.d, g.wavelength)[:, 0]
        np.testing.assert_allclose(a, near_field_arv(g.N, th, r, g.d, g.wavelength, "fresnel"),
                                   atol=1e-9)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            near_field_arv(4, 0.1, 5.0, 0.5, 1.0, mode="cubic")

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-1, 1), st.floats(0.5, 200.0))
    def test_unit_modulus(self, th, r):
        a = near_field_arv(16, th, r, 0.5, 1.0)
        np.testing.assert_allclose(np.abs(a), 1.0, rtol=1e-12)
        assert a[0] == pytest.approx(1.0)


class TestVisibleRegion:
    def test_stationary_sparsity(self):
        for lam in (0.5, 0.875, 1.0):
            assert MarkovVRPrior.from_sparsity(lam).lambda_vr == pytest.approx(lam)

    def test_bad_probabilities(self):
        with pytest.raises(ValueError):
            MarkovVRPrior(0.0, 0.1)
        with pytest.raises(ValueError):
            MarkovVRPrior.from_sparsity(0.0)

    def test_expand_replicates_subarrays(self):
        vr = VisibleRegion(np.array([[1, 0], [0, 1]], dtype=np.int8))
        np.testing.assert_array_equal(vr.expand(6), [[1, 0]] * 3 + [[0, 1]] * 3)

    def test_no_fully_blocked_paths(self, rng):
        g = SystemGeometry(M=4, N=16, K=8)
        prior = MarkovVRPrior.from_sparsity(0.3)
        for _ in range(50):
            vr = sample_vr(g, 4, prior, rng)
            assert vr.phi_sub.shape == (8, 4)
            assert np.all(vr.phi_sub.any(axis=0))

    def test_empirical_sparsity(self, rng):
        g = SystemGeometry(M=4, N=64, K=16)
        prior = MarkovVRPrior.from_sparsity(0.8)
        frac = np.mean([sample_vr(g, 8, prior, rng).phi_sub.mean() for _ in range(300)])
        assert frac == pytest.approx(0.8, abs=0.03)

    def test_full_visibility(self, rng):
        vr = sample_vr(SystemGeometry(), 3, MarkovVRPrior.from_sparsity(1.0), rng)
        assert np.all(vr.phi_sub == 1)


class TestChannels:
    def test_path_sampling_ranges(self, rng):
        g = SystemGeometry()
        p = sample_paths(g, 50, 50, rng, pathloss=None)
        assert np.all(np.abs(p.theta_U) <= 1) and np.all(np.abs(p.phi_R) <= 1)
        assert np.all((p.r_U >= 10) & (p.r_U <= 20))

    def test_los_boost(self):
        g = SystemGeometry()
        model = PathLossModel(sigma_db=0.0)
        ratios = []
        for s in range(200):
            p = sample_paths(g, 2, 1, np.random.default_rng(s), pathloss=model)
            ratios.append(np.abs(p.alpha[0]) ** 2 / np.abs(p.alpha[1]) ** 2)
        # 10 dB boost times the ratio of two unit exponentials, median 1
        assert 10 * np.log10(np.median(ratios)) == pytest.approx(10, abs=2)

    def test_cascade_is_vec_of_h_diag_hu(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        p = sample_paths(g, 2, 2, rng)
        vr = sample_vr(g, 2, MarkovVRPrior.from_sparsity(0.75), rng)
        ch = synthesize_channel(g, p, vr)
        np.testing.assert_allclose(ch.h_cascaded, (ch.H @ np.diag(ch.h_u)).ravel(order="F"))

    def test_blocked_elements_are_dark(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        p = sample_paths(g, 1, 1, rng)
        vr = VisibleRegion(np.array([[1], [0], [0], [1]], dtype=np.int8))
        ch = synthesize_channel(g, p, vr)
        np.testing.assert_array_equal(ch.h_u[4:12], 0)
        assert np.all(ch.h_u[:4] != 0)

    def test_vr_shape_checked(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        p = sample_paths(g, 2, 1, rng)
        with pytest.raises(ValueError):
            synthesize_channel(g, p, VisibleRegion(np.ones((4, 3), dtype=np.int8)))


class TestObserve:
    def test_noiseless(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        ch = synthesize_channel(g, sample_paths(g, 2, 2, rng),
                                sample_vr(g, 2, MarkovVRPrior.from_sparsity(1.0), rng))
        obs = observe(ch, 8, np.inf, rng)
        assert obs.noise_var == 0
        np.testing.assert_allclose(obs.Y, noiseless_pilots(ch, obs.ris_phases))
        np.testing.assert_allclose(np.abs(obs.ris_phases), 1)

    def test_snr_definition(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        ch = synthesize_channel(g, sample_paths(g, 2, 2, rng),
                                sample_vr(g, 2, MarkovVRPrior.from_sparsity(1.0), rng))
        sig, noise = [], []
        for _ in range(200):
            obs = observe(ch, 16, 10.0, rng)
            clean = noiseless_pilots(ch, obs.ris_phases)
            sig.append(np.mean(np.abs(clean) ** 2))
            noise.append(np.mean(np.abs(obs.Y - clean) ** 2))
        assert 10 * np.log10(np.mean(sig) / np.mean(noise)) == pytest.approx(10, abs=0.3)

    def test_permuted_pilots(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        ch = synthesize_channel(g, sample_paths(g, 1, 1, rng),
                                sample_vr(g, 1, MarkovVRPrior.from_sparsity(1.0), rng))
        obs = observe(ch, 5, 20.0, rng)
        perm = obs.permuted([4, 3, 2, 1, 0])
        np.testing.assert_array_equal(perm.Y, obs.Y[:, ::-1])
        np.testing.assert_array_equal(perm.ris_phases, obs.ris_phases[:, ::-1])

    def test_needs_pilots(self, rng):
        g = SystemGeometry(M=4, N=16, K=4)
        ch = synthesize_channel(g, sample_paths(g, 1, 1, rng),
                                sample_vr(g, 1, MarkovVRPrior.from_sparsity(1.0), rng))
        with pytest.raises(ValueError):
            observe(ch, 0, 10.0, rng)
