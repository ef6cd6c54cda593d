"""The identity suite behind the ``identity-check`` command."""

import time

import numpy as np
from hybrid_ris.identities import (TOL, format_results, gain_chain, on_grid_case, on_grid_error,
                                   run_identity_suite, vr_chain)


class TestChains:
    def test_gain_chain_square(self, rng):
        assert max(gain_chain(rng, 3, 4, 3)) < TOL

    def test_gain_chain_degenerate_sizes(self, rng):
        assert max(gain_chain(rng, 1, 1, 1)) < TOL
        assert max(gain_chain(rng, 5, 2, 6)) < TOL

    def test_vr_chain(self, rng):
        assert max(vr_chain(rng, 3, 6, 3, 4)) < TOL

    def test_chain_detects_a_wrong_step(self, rng, monkeypatch):
        import hybrid_ris.identities as ids
        # dropping the conjugate of the far-field dictionary must break the last step
        original = ids.khatri_rao_row
        monkeypatch.setattr(ids, "khatri_rao_row", lambda a, b: original(a, b.conj()))
        errs = gain_chain(rng, 3, 3, 3)
        assert max(errs[:-1]) < TOL
        assert errs[-1] > 1e-3


class TestOnGrid:
    def test_counts_and_values(self, rng):
        for _ in range(20):
            case = on_grid_case(rng)
            assert case.nnz_direct == case.nnz_compressed == 4
            np.testing.assert_allclose(case.compressed, case.direct, rtol=1e-10,
                                       atol=1e-10 * np.linalg.norm(case.direct))

    def test_more_paths(self, rng):
        assert on_grid_error(rng, L_RB=3, L_U=2, n_rings=3) < TOL


class TestSuite:
    def test_all_pass_quickly(self):
        t0 = time.perf_counter()
        results = run_identity_suite(100, seed=1)
        assert time.perf_counter() - t0 < 10
        assert all(r.passed for r in results)
        assert all(r.n_instances == 100 for r in results)
        assert "on-grid-equivalence" in format_results(results)
