"""Polar grids, the compressed dictionary, off-grid derivatives and the sensing operators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ris.dictionary import (DERIVATIVE_FAMILIES, DictionarySet, OffGrid, SensingOperator,
                                   VRSensingOperator, assemble_D1, assemble_D1_literal, assemble_D2,
                                   assemble_D2_literal, build_compressed_grid, build_polar_grid,
                                   centered_angles, coherence, compress_dictionary,
                                   dictionary_derivatives, map_pairs, nearest_column,
                                   perturbed_dictionaries, polar_dictionary, ring_step, wrap_angle)
from hybrid_ris.geometry import SystemGeometry, far_field_arv, fresnel_arv_curv, near_field_arv
from hybrid_ris.tensor import kron, vec

from conftest import crandn


def random_offgrid(rng, dset, scale=0.5):
    return OffGrid(rng.uniform(-scale, scale, dset.M) * dset.bs_half_cell,
                   rng.uniform(-scale, scale, dset.Q_bar) * dset.angle_half_cell,
                   rng.uniform(0, scale, dset.Q_bar) * dset.curv_half_cell)


def phases(rng, N, P):
    return np.exp(2j * np.pi * rng.random((N, P)))


class TestGrids:
    def test_centered_angles(self):
        np.testing.assert_allclose(centered_angles(4), [-0.75, -0.25, 0.25, 0.75])

    def test_ring_step_positive_beta(self, small_geom):
        with pytest.raises(ValueError):
            ring_step(small_geom, 0.0)

    def test_polar_grid_layout(self, small_geom):
        g = build_polar_grid(small_geom, n_angles=8, n_rings=3)
        assert g.size == 24
        np.testing.assert_array_equal(g.ring_of([0, 7, 8, 23]), [0, 0, 1, 2])
        assert np.all(np.isinf(g.ranges[:8]))
        np.testing.assert_allclose(g.curvature[8:16], g.c_step)
        assert np.all(np.abs(g.angles) <= 1 - 1e-3)

    def test_ranges_follow_ring_rule(self, small_geom):
        beta = 1.2
        g = build_polar_grid(small_geom, beta, n_angles=8, n_rings=3)
        N, d, lam = small_geom.N, small_geom.d, small_geom.wavelength
        for s in (1, 2):
            idx = slice(8 * s, 8 * (s + 1))
            expect = N**2 * d**2 * (1 - g.angles[idx] ** 2) / (2 * beta**2 * s * lam)
            np.testing.assert_allclose(g.ranges[idx], expect)

    def test_points(self, small_geom):
        g = build_polar_grid(small_geom, n_angles=4, n_rings=1)
        assert len(g.points) == 4 and g.points[0][1] == np.inf

    def test_needs_far_ring(self, small_geom):
        with pytest.raises(ValueError):
            build_polar_grid(small_geom, n_rings=0)

    def test_compressed_grid_covers_differences(self, small_geom):
        N = small_geom.N
        g = build_compressed_grid(small_geom, n_angles=N, n_rings=1)
        c = centered_angles(N)
        diffs = wrap_angle(c[:, None] - c[None, :], small_geom).ravel()
        assert np.all(np.min(np.abs(diffs[:, None] - g.angles[None, :]), axis=1) < 1e-12)

    def test_wrap_period(self, small_geom):
        np.testing.assert_allclose(wrap_angle([1.5, -1.5, 0.25, 1.0], small_geom),
                                   [-0.5, 0.5, 0.25, -1.0])

    def test_nearest_column(self, small_geom):
        g = build_compressed_grid(small_geom, n_angles=16, n_rings=2)
        q = nearest_column(g, g.angles + 0.01, g.curvature + 0.1 * g.c_step)
        np.testing.assert_array_equal(q, np.arange(g.size))

    def test_dictionary_columns_are_unit_modulus(self, small_geom):
        D = polar_dictionary(build_polar_grid(small_geom, n_angles=16, n_rings=2), small_geom)
        np.testing.assert_allclose(np.abs(D), 1)
        assert 0 < coherence(D) < 1


class TestPairMapping:
    def test_products_land_on_compressed_columns(self, small_geom):
        N = small_geom.N
        W_grid = build_polar_grid(small_geom, n_angles=N, n_rings=2)
        grid = build_compressed_grid(small_geom, n_angles=N, n_rings=2)
        ff = centered_angles(N)
        Q, _, cmap = compress_dictionary(W_grid, ff, small_geom, grid)
        W = polar_dictionary(W_grid, small_geom)
        for j in range(W_grid.size):
            for n in range(N):
                prod = W[:, j] * far_field_arv(N, ff[n], small_geom.d, small_geom.wavelength).conj()
                np.testing.assert_allclose(prod, Q[:, cmap.column[j, n]], atol=1e-10)

    def test_range_transform(self, small_geom):
        W_grid = build_polar_grid(small_geom, n_angles=8, n_rings=2)
        grid = build_compressed_grid(small_geom, n_angles=8, n_rings=2)
        m = map_pairs(W_grid, [0.1, -0.3], small_geom, grid)
        ring1 = W_grid.curvature > 0
        r = W_grid.ranges[ring1][:, None]
        th = W_grid.angles[ring1][:, None]
        np.testing.assert_allclose(m.range[ring1], r * (1 - m.angle[ring1] ** 2) / (1 - th**2))
        assert np.all(np.isinf(m.range[~ring1]))

    def test_endfire_rejected(self, small_geom):
        g = build_polar_grid(small_geom, n_angles=4, n_rings=1, endfire_clip=0.0)
        g = type(g)(np.array([1.0, 0.0, 0.5, -0.5]), g.curvature, 4, 1, g.c_step)
        with pytest.raises(ValueError):
            map_pairs(g, [0.0], small_geom, g)

    def test_masked_compression(self, small_geom):
        W_grid = build_polar_grid(small_geom, n_angles=4, n_rings=1)
        grid = build_compressed_grid(small_geom, n_angles=16, n_rings=1)
        mask = np.zeros((small_geom.N, W_grid.size))
        mask[:8] = 1
        masked, _, cmap = compress_dictionary(W_grid, centered_angles(4), small_geom, grid, mask)
        assert masked.shape == (small_geom.N, W_grid.size, 4)
        np.testing.assert_array_equal(masked[8:], 0)


class TestOffGrid:
    def test_zero_offsets_reproduce_grid(self, small_dset):
        F, Q = perturbed_dictionaries(small_dset, OffGrid.zeros(small_dset.M, small_dset.Q_bar))
        np.testing.assert_array_equal(F, small_dset.F_M)
        np.testing.assert_array_equal(Q, small_dset.Q)

    def test_perturbed_column_matches_reevaluation(self, small_dset, rng):
        g = small_dset.geom
        xi = random_offgrid(rng, small_dset)
        F, Q = perturbed_dictionaries(small_dset, xi)
        ang, curv = small_dset.ris_params(xi)
        for q in np.flatnonzero((curv > 0) & (np.abs(ang) < 1))[:10]:
            r = (1 - ang[q] ** 2) / curv[q]
            np.testing.assert_allclose(Q[:, q], near_field_arv(g.N, ang[q], r, g.d, g.wavelength,
                                                               "fresnel"), atol=1e-9)
        for m in range(small_dset.M):
            th = small_dset.bs_angles[m] + xi.delta_vartheta[m]
            np.testing.assert_allclose(F[:, m], far_field_arv(small_dset.M, th, g.d, g.wavelength))

    def test_unit_modulus_under_perturbation(self, small_dset, rng):
        F, Q = perturbed_dictionaries(small_dset, random_offgrid(rng, small_dset))
        np.testing.assert_allclose(np.abs(F), 1)
        np.testing.assert_allclose(np.abs(Q), 1)

    def test_invalid_perturbations(self, small_dset):
        xi = OffGrid.zeros(small_dset.M, small_dset.Q_bar)
        xi.delta_curv[0] = -1.0
        with pytest.raises(ValueError):
            small_dset.Q_at(xi)
        xi = OffGrid.zeros(small_dset.M, small_dset.Q_bar)
        xi.delta_vartheta[-1] = 1.0
        with pytest.raises(ValueError):
            small_dset.F_M_at(xi)

    def test_half_cell_check(self, small_dset, rng):
        xi = random_offgrid(rng, small_dset, scale=0.4)
        xi.delta_angle[:] = xi.delta_angle * 0.5
        xi.delta_curv[:] = 0
        assert small_dset.check_offgrid(xi)
        xi.delta_vartheta[0] = 1.5 * small_dset.bs_half_cell
        assert not small_dset.check_offgrid(xi)

    def test_centre_angle_bound(self, small_dset):
        xi = OffGrid.zeros(small_dset.M, small_dset.Q_bar)
        # a pure curvature move that keeps the centre angle fixed is within the cell
        dc = 0.4 * small_dset.curv_half_cell
        xi.delta_curv[5] = dc
        xi.delta_angle[5] = small_dset.aperture_mid * dc
        assert small_dset.check_offgrid(xi)

    def test_range_offsets(self, small_dset):
        xi = OffGrid.zeros(small_dset.M, small_dset.Q_bar)
        np.testing.assert_array_equal(small_dset.delta_r_bar(xi), 0)
        q = small_dset.grid.n_angles + 3
        xi.delta_curv[q] = 0.1 * small_dset.curv_half_cell
        dr = small_dset.delta_r_bar(xi)
        assert dr[q] < 0 and np.count_nonzero(dr) == 1

    def test_copy_is_deep(self, small_dset):
        xi = OffGrid.zeros(small_dset.M, small_dset.Q_bar)
        c = xi.copy()
        c.delta_angle[0] = 1
        assert xi.delta_angle[0] == 0


def _column(dset, which, q, phi, c):
    g = dset.geom
    return fresnel_arv_curv(g.N, phi, c, g.d, g.wavelength)[:, 0]


class TestDerivatives:
    h = 1e-6

    def _fd(self, dset, xi, which, idx):
        g = dset.geom
        if which == "angle_bs":
            def f(s):
                x = xi.copy()
                x.delta_vartheta[idx] += s
                return dset.F_M_at(x)[:, idx]
        else:
            ang, curv = dset.ris_params(xi)
            phi, c = ang[idx], curv[idx]
            r = (1 - phi**2) / c if c > 0 else np.inf

            def f(s):
                if which == "angle_ris_fixed_curvature":
                    return fresnel_arv_curv(g.N, phi + s, c, g.d, g.wavelength)[:, 0]
                if which == "curvature_ris":
                    return fresnel_arv_curv(g.N, phi, c + s, g.d, g.wavelength)[:, 0]
                if which == "angle_ris":
                    cc = (1 - (phi + s) ** 2) / r if c > 0 else 0.0
                    return fresnel_arv_curv(g.N, phi + s, cc, g.d, g.wavelength)[:, 0]
                return fresnel_arv_curv(g.N, phi, (1 - phi**2) / (r + s), g.d, g.wavelength)[:, 0]
        return (f(self.h) - f(-self.h)) / (2 * self.h)

    @pytest.mark.parametrize("which", DERIVATIVE_FAMILIES)
    def test_central_differences(self, small_dset, which):
        rng = np.random.default_rng(42)
        for _ in range(50):
            xi = random_offgrid(rng, small_dset)
            if which == "angle_bs":
                idx = int(rng.integers(small_dset.M))
            else:
                # stay off the far-field ring and away from endfire, where range is undefined
                ok = np.flatnonzero((small_dset.grid.curvature > 0)
                                    & (np.abs(small_dset.grid.angles) < 0.9))
                idx = int(rng.choice(ok))
            an = dictionary_derivatives(small_dset, xi, which, idx)
            fd = self._fd(small_dset, xi, which, idx)
            assert np.linalg.norm(an - fd) / np.linalg.norm(an) < 1e-5

    @pytest.mark.parametrize("which", DERIVATIVE_FAMILIES)
    def test_reference_element_is_constant(self, small_dset, which):
        idx = small_dset.grid.n_angles + 2 if which != "angle_bs" else 1
        assert dictionary_derivatives(small_dset, None, which, idx)[0] == 0

    def test_bs_derivative_magnitude(self, small_dset):
        g = small_dset.geom
        dv = dictionary_derivatives(small_dset, None, "angle_bs", 2)
        np.testing.assert_allclose(np.abs(dv), g.wavenumber * np.arange(small_dset.M) * g.d)

    def test_range_derivative_zero_on_far_ring(self, small_dset):
        np.testing.assert_array_equal(dictionary_derivatives(small_dset, None, "range_ris", 0), 0)

    def test_unknown_family(self, small_dset):
        with pytest.raises(ValueError):
            dictionary_derivatives(small_dset, None, "tilt", 0)


class TestSensingOperators:
    def test_one_hot_selects_kron_column(self, small_dset, rng):
        E = phases(rng, small_dset.geom.N, 3)
        op = assemble_D1(small_dset, np.ones((4, small_dset.Q_bar)), E)
        m, q = 2, 7
        x = np.zeros(op.shape[1], dtype=complex)
        x[m + small_dset.M * q] = 1
        expect = np.concatenate([kron(E[:, p][None, :], np.eye(small_dset.M))
                                 @ np.kron(small_dset.Q[:, q], small_dset.F_M[:, m]) for p in range(3)])
        np.testing.assert_allclose(op.apply(x), expect, atol=1e-12)

    def test_structured_matches_literal(self, small_dset, rng):
        E = phases(rng, small_dset.geom.N, 3)
        Phi_s = rng.integers(0, 2, size=(4, small_dset.Q_bar)).astype(float)
        xi = random_offgrid(rng, small_dset)
        op = assemble_D1(small_dset, Phi_s, E, xi)
        np.testing.assert_allclose(op.dense(), assemble_D1_literal(small_dset, Phi_s, E, xi),
                                   atol=1e-10)

    def test_d2_matches_literal(self, small_dset, rng):
        E = phases(rng, small_dset.geom.N, 2)
        x = crandn(rng, small_dset.M * small_dset.Q_bar)
        xi = random_offgrid(rng, small_dset)
        op = assemble_D2(small_dset, x, E, xi)
        np.testing.assert_allclose(op.dense(), assemble_D2_literal(small_dset, x, E, xi), atol=1e-10)

    def test_bilinear_consistency(self, small_dset, rng):
        for _ in range(10):
            E = phases(rng, small_dset.geom.N, 4)
            Phi_s = rng.integers(0, 2, size=(4, small_dset.Q_bar)).astype(float)
            x = crandn(rng, small_dset.M * small_dset.Q_bar)
            xi = random_offgrid(rng, small_dset)
            a = SensingOperator(small_dset, E, Phi_s, xi).apply(x)
            b = VRSensingOperator(small_dset, E, x, xi).apply(vec(Phi_s))
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10 * np.linalg.norm(a))

    def test_adjoint(self, small_dset, rng):
        op = SensingOperator(small_dset, phases(rng, small_dset.geom.N, 5))
        x, r = crandn(rng, op.shape[1]), crandn(rng, op.shape[0])
        assert np.vdot(op.apply(x), r) == pytest.approx(np.vdot(x, op.adjoint(r)))

    def test_norms_gram_and_columns(self, small_dset, rng):
        op = SensingOperator(small_dset, phases(rng, small_dset.geom.N, 5),
                             rng.integers(0, 2, size=(4, small_dset.Q_bar)).astype(float),
                             random_offgrid(rng, small_dset))
        D = op.dense()
        np.testing.assert_allclose(op.col_norms2(), np.sum(np.abs(D) ** 2, axis=0))
        idx = rng.choice(op.shape[1], 7, replace=False)
        np.testing.assert_allclose(op.columns(idx), D[:, idx], atol=1e-12)
        np.testing.assert_allclose(op.gram(idx), D[:, idx].conj().T @ D[:, idx], atol=1e-9)

    def test_vr_operator_columns(self, small_dset, rng):
        x = crandn(rng, small_dset.M * small_dset.Q_bar)
        op = VRSensingOperator(small_dset, phases(rng, small_dset.geom.N, 3), x)
        D = op.dense()
        cols = np.array([1, 5])
        blk = np.concatenate([np.arange(4 * c, 4 * c + 4) for c in cols])
        np.testing.assert_allclose(op.columns(cols), D[:, blk])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_linearity(self, seed, P):
        r = np.random.default_rng(seed)
        dset = DictionarySet(SystemGeometry(M=2, N=8, K=2), centered_angles(2),
                             build_compressed_grid(SystemGeometry(M=2, N=8, K=2), n_angles=8))
        op = SensingOperator(dset, phases(r, 8, P))
        x1, x2 = crandn(r, op.shape[1]), crandn(r, op.shape[1])
        a = complex(r.standard_normal(), r.standard_normal())
        np.testing.assert_allclose(op.apply(a * x1 + x2), a * op.apply(x1) + op.apply(x2),
                                   atol=1e-10)
