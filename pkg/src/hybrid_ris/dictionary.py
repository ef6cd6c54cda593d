"""Far-field and polar-domain dictionaries, the compressed cascaded dictionary,
off-grid perturbations and the two sensing operators.

Near-field columns are parameterized internally by (angle, curvature) where
``curvature = (1 - angle**2) / range``. The Fresnel phase of element n is then
``k * (-(n-1) d angle + (n-1)**2 d**2 curvature / 2)``, which stays finite at
endfire and reduces to the far-field response at zero curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import SystemGeometry, fresnel_arv_curv
from .tensor import kron, kron_selection, unvec, vec


def centered_angles(n: int) -> np.ndarray:
    """``(2/n) * (i - (n+1)/2)`` for i = 1..n, the usual DFT-type cosine grid."""
    return (2.0 / n) * (np.arange(1, n + 1) - (n + 1) / 2)


def ring_step(geom: SystemGeometry, beta: float) -> float:
    """Curvature spacing between consecutive polar rings."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 2 * beta**2 * geom.wavelength / (geom.N**2 * geom.d**2)


@dataclass(frozen=True)
class PolarGrid:
    """Grid points stored ring-major: index ``s * n_angles + i``; ring 0 is far field."""

    angles: np.ndarray
    curvature: np.ndarray
    n_angles: int
    n_rings: int
    c_step: float

    @property
    def size(self) -> int:
        return self.n_angles * self.n_rings

    @property
    def ranges(self) -> np.ndarray:
        """Distance of each point; ``inf`` on the far-field ring."""
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (1 - self.angles**2) / self.curvature
        return np.where(self.curvature > 0, r, np.inf)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.angles.tolist(), self.ranges.tolist()))

    def ring_of(self, index) -> np.ndarray:
        return np.asarray(index) // self.n_angles


def build_polar_grid(geom: SystemGeometry, beta: float = 1.2, n_angles: int | None = None,
                     n_rings: int = 2, endfire_clip: float = 1e-3) -> PolarGrid:
    """Polar grid with ranges ``r_s = N²d²(1-φ²) / (2 β² s λ)`` plus a far-field ring.

    Angles are uniform in cosine and clipped to ``|φ| <= 1 - endfire_clip``.
    """
    n_angles = geom.N if n_angles is None else n_angles
    if n_rings < 1:
        raise ValueError("need at least the far-field ring")
    c1 = ring_step(geom, beta)
    ang = np.clip(centered_angles(n_angles), -1 + endfire_clip, 1 - endfire_clip)
    angles = np.tile(ang, n_rings)
    curvature = np.repeat(c1 * np.arange(n_rings), n_angles)
    return PolarGrid(angles, curvature, n_angles, n_rings, c1)


def build_compressed_grid(geom: SystemGeometry, beta: float = 1.2, n_angles: int | None = None,
                          n_rings: int = 2) -> PolarGrid:
    """Grid for the cascaded (difference) angle.

    Angle differences of two cosines span [-2, 2]; with half-wavelength spacing
    the response is 2-periodic in angle, so the grid covers [-1, 1) and every
    difference is folded onto it. The angles are ``-1 + 2 i / n_angles``, which
    contains all differences of two centred grids of the same size.
    """
    n_angles = geom.N if n_angles is None else n_angles
    c1 = ring_step(geom, beta)
    ang = -1 + 2.0 * np.arange(n_angles) / n_angles
    return PolarGrid(np.tile(ang, n_rings), np.repeat(c1 * np.arange(n_rings), n_angles),
                     n_angles, n_rings, c1)


def wrap_angle(angle, geom: SystemGeometry) -> np.ndarray:
    """Fold an angle cosine into [-p/2, p/2) with period ``p = λ/d``."""
    period = geom.wavelength / geom.d
    return (np.asarray(angle) + period / 2) % period - period / 2


def polar_dictionary(grid: PolarGrid, geom: SystemGeometry) -> np.ndarray:
    return fresnel_arv_curv(geom.N, grid.angles, grid.curvature, geom.d, geom.wavelength)


def coherence(dictionary: np.ndarray) -> float:
    """Largest normalized inner product between distinct columns."""
    G = np.abs(dictionary.conj().T @ dictionary) / dictionary.shape[0]
    np.fill_diagonal(G, 0)
    return float(G.max())


@dataclass(frozen=True)
class CompressedMap:
    """Result of mapping (near-field column, far-field column) pairs."""

    angle: np.ndarray  # folded difference angle per pair, shape (N̄, N)
    curvature: np.ndarray
    range: np.ndarray  # r_bar, inf on the far-field ring
    column: np.ndarray  # nearest compressed column per pair


def map_pairs(W_grid: PolarGrid, ff_angles: np.ndarray, geom: SystemGeometry,
              grid: PolarGrid) -> CompressedMap:
    """Map every product of a near-field and a conjugated far-field response.

    ``φ̄ = ϑ - φ`` (folded) and the curvature is unchanged, which is the same as
    ``r̄ = r (1 - φ̄²) / (1 - ϑ²)``.
    """
    if np.any(np.abs(W_grid.angles) >= 1):
        raise ValueError("near-field grid angle at endfire")
    angle = wrap_angle(W_grid.angles[:, None] - np.asarray(ff_angles)[None, :], geom)
    curv = np.broadcast_to(W_grid.curvature[:, None], angle.shape).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        rng = np.where(curv > 0, (1 - angle**2) / curv, np.inf)
    return CompressedMap(angle, curv, rng, nearest_column(grid, angle, curv))


def nearest_column(grid: PolarGrid, angle, curvature) -> np.ndarray:
    """Index of the nearest grid point, by angle cell then curvature ring."""
    da = 2.0 / grid.n_angles
    ia = np.rint((np.asarray(angle) + 1) / da).astype(int) % grid.n_angles
    ring = np.clip(np.rint(np.asarray(curvature) / grid.c_step).astype(int), 0, grid.n_rings - 1)
    return ring * grid.n_angles + ia


def compress_dictionary(W_grid: PolarGrid, ff_angles: np.ndarray, geom: SystemGeometry,
                        grid: PolarGrid, vr_mask: np.ndarray | None = None):
    """Build the compressed dictionary ``Q`` on ``grid`` plus the pair map.

    Returns ``(Q, grid, column_map)``. With ``vr_mask`` (N x N̄) the mask is
    applied to ``Q`` per the columns it is mapped from; it is only meaningful
    when all pairs sharing a column share a mask, so it is returned as a
    per-pair list instead: ``Q_masked[n̄, n] = Q[:, column_map[n̄, n]] * vr_mask[:, n̄]``.
    """
    Q = polar_dictionary(grid, geom)
    cmap = map_pairs(W_grid, ff_angles, geom, grid)
    if vr_mask is None:
        return Q, grid, cmap
    masked = Q[:, cmap.column] * vr_mask[:, :, None]
    return masked, grid, cmap


# -- dictionary set and off-grid perturbations -----------------------------------


@dataclass(frozen=True)
class OffGrid:
    """Off-grid offsets: BS angles, cascaded angles and cascaded curvatures."""

    delta_vartheta: np.ndarray
    delta_angle: np.ndarray
    delta_curv: np.ndarray

    @classmethod
    def zeros(cls, M: int, Q_bar: int) -> "OffGrid":
        return cls(np.zeros(M), np.zeros(Q_bar), np.zeros(Q_bar))

    def copy(self) -> "OffGrid":
        return OffGrid(self.delta_vartheta.copy(), self.delta_angle.copy(), self.delta_curv.copy())


@dataclass(frozen=True)
class DictionarySet:
    geom: SystemGeometry
    bs_angles: np.ndarray  # M
    grid: PolarGrid  # compressed grid, Q̄ points

    @property
    def M(self) -> int:
        return len(self.bs_angles)

    @property
    def Q_bar(self) -> int:
        return self.grid.size

    @property
    def bs_half_cell(self) -> float:
        return 1.0 / self.M

    @property
    def angle_half_cell(self) -> float:
        return 1.0 / self.grid.n_angles

    @property
    def curv_half_cell(self) -> float:
        return 0.5 * self.grid.c_step

    @property
    def aperture_mid(self) -> float:
        """Distance from the reference element to the RIS aperture centre."""
        return (self.geom.N - 1) * self.geom.d / 2

    @property
    def F_M(self) -> np.ndarray:
        return self.F_M_at(None)

    @property
    def Q(self) -> np.ndarray:
        return self.Q_at(None)

    def F_M_at(self, xi: OffGrid | None) -> np.ndarray:
        ang = self.bs_angles if xi is None else self.bs_angles + xi.delta_vartheta
        if np.any(np.abs(ang) > 1):
            raise ValueError("perturbed BS angle outside [-1, 1]")
        return fresnel_arv_curv(self.M, ang, np.zeros_like(ang), self.geom.d, self.geom.wavelength)

    def ris_params(self, xi: OffGrid | None) -> tuple[np.ndarray, np.ndarray]:
        if xi is None:
            return self.grid.angles, self.grid.curvature
        curv = self.grid.curvature + xi.delta_curv
        if np.any(curv < 0):
            raise ValueError("perturbed curvature is negative")
        return self.grid.angles + xi.delta_angle, curv

    def Q_at(self, xi: OffGrid | None) -> np.ndarray:
        ang, curv = self.ris_params(xi)
        return fresnel_arv_curv(self.geom.N, ang, curv, self.geom.d, self.geom.wavelength)

    def r_bar(self, xi: OffGrid | None = None) -> np.ndarray:
        """Ranges of the (possibly perturbed) compressed columns, folded angle."""
        ang, curv = self.ris_params(xi)
        ang = wrap_angle(ang, self.geom)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(curv > 0, (1 - ang**2) / curv, np.inf)

    def delta_r_bar(self, xi: OffGrid) -> np.ndarray:
        """Range offsets implied by ``xi``; zero where either range is infinite."""
        base = self.r_bar(None)
        new = self.r_bar(xi)
        with np.errstate(invalid="ignore"):
            out = new - base
        return np.where(np.isfinite(out), out, 0.0)

    def check_offgrid(self, xi: OffGrid, tol: float = 1e-12) -> bool:
        """Whether all offsets stay within half a grid cell.

        The angle bound applies to the aperture-centre angle, the coordinate
        the refinement clamps.
        """
        centre = xi.delta_angle - self.aperture_mid * xi.delta_curv
        return bool(
            np.all(np.abs(xi.delta_vartheta) <= self.bs_half_cell + tol)
            and np.all(np.abs(centre) <= self.angle_half_cell + tol)
            and np.all(np.abs(xi.delta_curv) <= self.curv_half_cell + tol)
        )


def build_dictionaries(geom: SystemGeometry, n_angles: int | None = None, n_rings: int = 2,
                       beta: float = 1.2) -> DictionarySet:
    return DictionarySet(geom, centered_angles(geom.M),
                         build_compressed_grid(geom, beta, n_angles, n_rings))


def perturbed_dictionaries(base: DictionarySet, xi: OffGrid) -> tuple[np.ndarray, np.ndarray]:
    """``(F_M(Δϑ), Q(Δφ̄, Δc̄))`` rebuilt from the shifted continuous parameters."""
    return base.F_M_at(xi), base.Q_at(xi)


DERIVATIVE_FAMILIES = ("angle_bs", "angle_ris", "range_ris", "curvature_ris", "angle_ris_fixed_curvature")


def dictionary_derivatives(base: DictionarySet, xi: OffGrid | None, which: str, index: int) -> np.ndarray:
    """Derivative of one dictionary column with respect to its own offset.

    ``angle_bs``: BS response vs Δϑ. ``angle_ris`` / ``range_ris``: cascaded
    column vs angle at fixed range and vs range at fixed angle (zero on the
    far-field ring). ``curvature_ris`` and ``angle_ris_fixed_curvature`` are the
    coordinates the refinement works in.
    """
    xi = OffGrid.zeros(base.M, base.Q_bar) if xi is None else xi
    k = base.geom.wavenumber
    d = base.geom.d
    if which == "angle_bs":
        col = base.F_M_at(xi)[:, index]
        t = np.arange(base.M) * d
        return -1j * k * t * col
    if which not in DERIVATIVE_FAMILIES:
        raise ValueError(f"unknown derivative family {which!r}")
    ang, curv = base.ris_params(xi)
    phi, c = ang[index], curv[index]
    col = fresnel_arv_curv(base.geom.N, phi, c, d, base.geom.wavelength)[:, 0]
    t = np.arange(base.geom.N) * d
    if which == "angle_ris_fixed_curvature":
        dpsi = -k * t
    elif which == "curvature_ris":
        dpsi = 0.5 * k * t**2
    elif which == "angle_ris":
        # c = (1 - φ²) / r with r held fixed
        dpsi = -k * t + (0.5 * k * t**2 * (-2 * phi * c / (1 - phi**2)) if c > 0 else 0.0)
    else:  # range_ris
        if c == 0:
            return np.zeros(base.geom.N, dtype=complex)
        r = (1 - phi**2) / c
        dpsi = -0.5 * k * t**2 * (1 - phi**2) / r**2
    return 1j * dpsi * col


# -- sensing operators -----------------------------------------------------------


class SensingOperator:
    """Gain-domain operator ``D1(Φ̄_s, Ξ)``: y = D1 x with x = vec(X), X of size M x Q̄.

    Pilot block p of ``D1 x`` is ``F X b_p`` with ``B = ((Q ⊙ Φ̄)^T E)``, so the
    whole product is ``vec(F X B)``. Column (m, q) sits at index ``m + M q``.
    """

    def __init__(self, dset: DictionarySet, ris_phases: np.ndarray, Phi_s: np.ndarray | None = None,
                 xi: OffGrid | None = None):
        self.dset = dset
        self.E = np.asarray(ris_phases)
        self.xi = xi
        self.F = dset.F_M_at(xi)
        self.Qp = dset.Q_at(xi)
        N = dset.geom.N
        if Phi_s is None:
            Phi_s = np.ones((dset.geom.K, dset.Q_bar))
        if Phi_s.shape != (dset.geom.K, dset.Q_bar):
            raise ValueError(f"Phi_s shape {Phi_s.shape} != (K, Q̄)")
        self.Phi_s = Phi_s
        self.mask = np.repeat(Phi_s, N // dset.geom.K, axis=0)
        self.B = (self.Qp * self.mask).T @ self.E
        self.M = dset.M
        self.P = self.E.shape[1]
        self.Q_bar = dset.Q_bar

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M * self.P, self.M * self.Q_bar)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return vec(self.F @ unvec(x, self.M, self.Q_bar) @ self.B)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        return vec(self.F.conj().T @ unvec(r, self.M, self.P) @ self.B.conj().T)

    def col_norms2(self) -> np.ndarray:
        fn = np.sum(np.abs(self.F) ** 2, axis=0)
        bn = np.sum(np.abs(self.B) ** 2, axis=1)
        return vec(np.outer(fn, bn))

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        m, q = idx % self.M, idx // self.M
        return (self.B[q, :].T[None, :, :] * self.F[:, m][:, None, :]).reshape(self.M * self.P, len(idx), order="F")

    def gram(self, idx) -> np.ndarray:
        """``D1[:, idx]^H D1[:, idx]`` from the factor Grams."""
        idx = np.asarray(idx, dtype=int)
        m, q = idx % self.M, idx // self.M
        GF = self.F.conj().T @ self.F
        GB = self.B.conj() @ self.B.T
        return GF[np.ix_(m, m)] * GB[np.ix_(q, q)]

    def dense(self) -> np.ndarray:
        return kron(self.B.T, self.F)


class VRSensingOperator:
    """Visibility-domain operator ``D2(x, Ξ)``: y = D2 vec(Φ_s) for fixed gains x.

    Column (k, q) sits at index ``k + K q`` and equals ``kron(B_k[q, :], F x_q)``
    where ``B_k`` uses only the RIS rows of subarray k.
    """

    def __init__(self, dset: DictionarySet, ris_phases: np.ndarray, x: np.ndarray,
                 xi: OffGrid | None = None):
        geom = dset.geom
        self.M, self.K, self.Q_bar = dset.M, geom.K, dset.Q_bar
        self.E = np.asarray(ris_phases)
        self.P = self.E.shape[1]
        F = dset.F_M_at(xi)
        Qp = dset.Q_at(xi)
        self.U = F @ unvec(x, self.M, self.Q_bar)  # M x Q̄
        Ns = geom.N // self.K
        # Bk[k, q, p] = sum over elements n of subarray k of Q[n, q] E[n, p]
        self.Bk = np.einsum("knq,knp->kqp", Qp.reshape(self.K, Ns, self.Q_bar), self.E.reshape(self.K, Ns, self.P))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M * self.P, self.K * self.Q_bar)

    def columns(self, cols) -> np.ndarray:
        """Dense ``MP x K|cols|`` block for the given gain columns."""
        cols = np.asarray(cols, dtype=int)
        # T[m, p, k, j] = U[m, q_j] * Bk[k, q_j, p]
        T = self.U[:, None, None, cols] * np.transpose(self.Bk[:, cols, :], (2, 0, 1))[None, :, :, :]
        return T.reshape(self.M * self.P, self.K * len(cols), order="F")

    def apply(self, phi_vec: np.ndarray) -> np.ndarray:
        Phi = unvec(phi_vec, self.K, self.Q_bar)
        B = np.einsum("kq,kqp->qp", Phi, self.Bk)
        return vec(self.U @ B)

    def dense(self) -> np.ndarray:
        return self.columns(np.arange(self.Q_bar))


def assemble_D1(dset, Phi_s, ris_phases, xi=None) -> SensingOperator:
    return SensingOperator(dset, ris_phases, Phi_s, xi)


def assemble_D2(dset, x, ris_phases, xi=None) -> VRSensingOperator:
    return VRSensingOperator(dset, ris_phases, x, xi)


def assemble_D1_literal(dset: DictionarySet, Phi_s: np.ndarray, ris_phases: np.ndarray,
                        xi: OffGrid | None = None) -> np.ndarray:
    """Dense D1 built term by term from Kronecker factors (small sizes only)."""
    geom = dset.geom
    F, Qp = perturbed_dictionaries(dset, xi or OffGrid.zeros(dset.M, dset.Q_bar))
    Phi_bar = kron(Phi_s, np.ones((geom.N // geom.K, 1)))
    core = kron(Qp * Phi_bar, F)
    I_M = np.eye(dset.M)
    return np.vstack([kron(ris_phases[:, p][None, :], I_M) @ core for p in range(ris_phases.shape[1])])


def assemble_D2_literal(dset: DictionarySet, x: np.ndarray, ris_phases: np.ndarray,
                        xi: OffGrid | None = None) -> np.ndarray:
    """Dense D2 built through the two sparse transforms ``S(1_{MxM})`` and ``S(1_{N/K})``."""
    geom = dset.geom
    M, N, K = dset.M, geom.N, geom.K
    F, Qp = perturbed_dictionaries(dset, xi or OffGrid.zeros(dset.M, dset.Q_bar))
    S_sub = kron_selection(np.ones((N // K, 1)), K, dset.Q_bar)
    S_blk = kron_selection(np.ones((M, M)), N, dset.Q_bar)
    masked = sp.diags(vec(kron(Qp, F))) @ S_blk @ S_sub
    I_M = sp.identity(M, format="csr")
    blocks = []
    for p in range(ris_phases.shape[1]):
        left = sp.kron(sp.csr_matrix(x[None, :]), sp.kron(sp.csr_matrix(ris_phases[:, p][None, :]), I_M))
        blocks.append((left @ masked).toarray())
    return np.vstack(blocks)
