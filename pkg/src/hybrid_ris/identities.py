"""Numerical verification of the vectorization chain behind the sparse model.

Every check draws random conformable inputs and compares consecutive forms of
the same quantity. ``run_identity_suite`` is what the ``identity-check`` CLI
command runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dictionary import (DictionarySet, SensingOperator, build_compressed_grid, build_polar_grid,
                         centered_angles, map_pairs, polar_dictionary)
from .geometry import SystemGeometry, far_field_arv
from .tensor import khatri_rao_col, khatri_rao_row, kron, kron_selection, relative_error, vec

TOL = 1e-10


def _crandn(rng, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _chain_error(forms: list[np.ndarray]) -> list[float]:
    """Relative error of each form against the one before it."""
    return [relative_error(forms[i], forms[i - 1]) for i in range(1, len(forms))]


def gain_chain(rng, M: int = 3, N: int = 4, N_bar: int = 3) -> list[float]:
    """Errors of the steps taking ``F_M A F_N^H diag(η) W̄ b`` to a linear map of ``vec(bᵀ ⊗ A)``.

    Returns six errors, one per entry of ``GAIN_STEPS``.
    """
    F_M, A, F_N = _crandn(rng, M, M), _crandn(rng, M, N), _crandn(rng, N, N)
    W, b, eta = _crandn(rng, N, N_bar), _crandn(rng, N_bar), _crandn(rng, N)
    I_M = np.eye(M)
    left = kron(eta[None, :], I_M)
    FNh = F_N.conj().T
    Wb = W @ b
    forms = [
        F_M @ A @ FNh @ np.diag(eta) @ Wb,
        F_M @ A @ FNh @ np.diag(Wb) @ eta,
        left @ vec(F_M @ A @ FNh @ np.diag(Wb)),
        left @ vec(F_M @ khatri_rao_col(Wb[None, :], A @ FNh)),
        left @ vec(F_M @ kron(b[None, :], A) @ khatri_rao_col(W.T, FNh)),
        left @ kron(khatri_rao_col(W.T, FNh).T, F_M) @ vec(kron(b[None, :], A)),
        left @ kron(khatri_rao_row(W, F_N.conj()), F_M) @ vec(kron(b[None, :], A)),
    ]
    return _chain_error(forms)


def vr_chain(rng, M: int = 3, N: int = 4, K: int = 2, Q_bar: int = 3) -> list[float]:
    """Errors of the steps exposing the VR matrix linearly, then the two selection transforms.

    Returns five errors, one per entry of ``VR_STEPS``. The last two are the
    ``S(1_{MxM})`` substitution and the ``S(1_{N/K})`` subarray expansion.
    """
    F_M, Q = _crandn(rng, M, M), _crandn(rng, N, Q_bar)
    Phi_s = rng.integers(0, 2, size=(K, Q_bar)).astype(float)
    Phi = kron(Phi_s, np.ones((N // K, 1)))
    x, eta = _crandn(rng, M * Q_bar), _crandn(rng, N)
    ones = np.ones((M, M))
    left = kron(x[None, :], kron(eta[None, :], np.eye(M)))
    S_blk = kron_selection(ones, N, Q_bar)
    S_sub = kron_selection(np.ones((N // K, 1)), K, Q_bar)
    mask = vec(kron(Q, F_M))
    forms = [
        kron(eta[None, :], np.eye(M)) @ kron(Q * Phi, F_M) @ x,
        left @ vec(kron(Q * Phi, F_M)),
        left @ vec(kron(Q, F_M) * kron(Phi, ones)),
        left @ (mask * vec(kron(Phi, ones))),
        left @ (mask * (S_blk @ vec(Phi))),
        left @ (mask * (S_blk @ (S_sub @ vec(Phi_s)))),
    ]
    return _chain_error(forms)


def kron_selection_error(rng) -> float:
    ra, ca, rb, cb = rng.integers(1, 4, size=4)
    a = _crandn(rng, ra, ca)
    B = _crandn(rng, rb, cb)
    return relative_error(kron_selection(a, rb, cb) @ vec(B), vec(kron(B, a)))


def hadamard_vec_error(rng) -> float:
    r, c = rng.integers(1, 6, size=2)
    a, b = _crandn(rng, r, c), _crandn(rng, r, c)
    return relative_error(np.diag(vec(a)) @ vec(b), vec(a * b))


# -- on-grid equivalence ---------------------------------------------------------


@dataclass(frozen=True)
class OnGridCase:
    """One synthetic on-grid channel in both representations."""

    direct: np.ndarray  # stacked pilots through the direct cascade
    compressed: np.ndarray  # D1 vec(X)
    nnz_direct: int
    nnz_compressed: int


def on_grid_case(rng, M: int = 4, N: int = 8, K: int = 4, n_rings: int = 2, L_RB: int = 2,
                 L_U: int = 2, P: int = 6, beta: float = 1.2, max_draws: int = 200) -> OnGridCase:
    """Draw an on-grid channel and evaluate the direct and compressed forms.

    The far-field link uses BS column ``m`` and RIS column ``n`` of centred DFT
    grids, the user link uses polar-grid column ``j``. Pair ``(j, n)`` lands on
    compressed column ``column_map[j, n]`` with the VR of user column ``j``.
    Draws are repeated until no compressed column is shared by two user
    columns, which would merge two different VR patterns.
    """
    geom = SystemGeometry(M=M, N=N, K=K)
    W_grid = build_polar_grid(geom, beta, n_angles=N, n_rings=n_rings)
    grid = build_compressed_grid(geom, beta, n_angles=N, n_rings=n_rings)
    ff = centered_angles(N)
    F_M = np.column_stack([far_field_arv(M, a, geom.d, geom.wavelength) for a in centered_angles(M)])
    F_N = np.column_stack([far_field_arv(N, a, geom.d, geom.wavelength) for a in ff])
    W = polar_dictionary(W_grid, geom)
    cmap = map_pairs(W_grid, ff, geom, grid).column
    for _ in range(max_draws):
        rb = rng.choice(M * N, size=L_RB, replace=False)
        js = rng.choice(W_grid.size, size=L_U, replace=False)
        owners: dict[int, int] = {}
        if all(owners.setdefault(cmap[j, r // M], j) == j for j in js for r in rb):
            break
    else:
        raise RuntimeError("could not draw a collision-free on-grid channel")

    A = np.zeros((M, N), dtype=complex)
    A[rb % M, rb // M] = _crandn(rng, L_RB)
    b = np.zeros(W_grid.size, dtype=complex)
    b[js] = _crandn(rng, L_U)
    Phi_sub = np.ones((K, W_grid.size))
    Phi_sub[:, js] = rng.integers(0, 2, size=(K, L_U))
    Phi_sub[rng.integers(K), js] = 1  # keep every path visible somewhere
    Phi = kron(Phi_sub, np.ones((N // K, 1)))
    E = np.exp(2j * np.pi * rng.random((N, P)))

    G = F_M @ A @ F_N.conj().T @ np.diag((W * Phi) @ b)
    direct = vec(G @ E)

    X = np.zeros((M, grid.size), dtype=complex)
    Phi_s = np.ones((K, grid.size))
    for j in js:
        for m, n in zip(rb % M, rb // M):
            q = cmap[j, n]
            X[m, q] += A[m, n] * b[j]
            Phi_s[:, q] = Phi_sub[:, j]
    dset = DictionarySet(geom, centered_angles(M), grid)
    compressed = SensingOperator(dset, E, Phi_s).apply(vec(X))
    nnz_direct = int(np.count_nonzero(vec(kron(b[None, :], A))))
    return OnGridCase(direct, compressed, nnz_direct, int(np.count_nonzero(X)))


def on_grid_error(rng, **kw) -> float:
    case = on_grid_case(rng, **kw)
    if case.nnz_direct != case.nnz_compressed:
        return np.inf
    return relative_error(case.compressed, case.direct)


# -- suite -----------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityResult:
    name: str
    n_instances: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= TOL)


GAIN_STEPS = ("diag-swap", "left-factor", "hadamard-to-kr", "kron-factor", "vec-kron", "row-kr")
VR_STEPS = ("vr-linear", "vr-vec", "vr-mask", "block-selection", "subarray-selection")


def run_identity_suite(n_instances: int = 100, seed: int = 0) -> list[IdentityResult]:
    """Run every identity on ``n_instances`` random draws; one result per identity."""
    rng = np.random.default_rng(seed)
    results = []

    def sized(lo, hi, n):
        return [int(v) for v in rng.integers(lo, hi, size=n)]

    t0 = time.perf_counter()
    errs = np.array([gain_chain(rng, *sized(1, 6, 3)) for _ in range(n_instances)])
    dt = time.perf_counter() - t0
    results += [IdentityResult(f"gain-chain/{s}", n_instances, float(errs[:, i].max()), dt)
                for i, s in enumerate(GAIN_STEPS)]

    t0 = time.perf_counter()
    rows = []
    for _ in range(n_instances):
        M, K, sub, Q_bar = sized(1, 5, 4)
        rows.append(vr_chain(rng, M, K * sub, K, Q_bar))
    errs = np.array(rows)
    dt = time.perf_counter() - t0
    results += [IdentityResult(f"vr-chain/{s}", n_instances, float(errs[:, i].max()), dt)
                for i, s in enumerate(VR_STEPS)]

    for name, fn in (("kron-selection", kron_selection_error), ("hadamard-vec", hadamard_vec_error),
                     ("on-grid-equivalence", on_grid_error)):
        t0 = time.perf_counter()
        err = max(fn(rng) for _ in range(n_instances))
        results.append(IdentityResult(name, n_instances, float(err), time.perf_counter() - t0))
    return results


def format_results(results: list[IdentityResult]) -> str:
    lines = [f"{'identity':28s} {'n':>5s} {'max rel err':>12s} {'time':>8s}  status"]
    for r in results:
        lines.append(f"{r.name:28s} {r.n_instances:5d} {r.max_error:12.3e} {r.seconds:7.3f}s  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
