"""Off-grid refinement by coordinate-wise gradient ascent on the data fit.

The objective is ``L = -||y - D1(Φ̂, Ξ) x̂||²``. A sweep moves every active
cascaded column first in angle, then in curvature, then every active BS
column in angle. Each parameter gets its own backtracking line search whose
first trial is the Gauss-Newton step capped at one grid cell.

Angle and curvature derivatives are almost collinear when the reference
element sits at the array edge, so the curvature step is taken with the
aperture-centre angle held fixed; the angle clamp applies to that centre angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dictionary import DictionarySet, OffGrid, SensingOperator
from .tensor import unvec
from .vbi import active_columns


@dataclass
class MLGradient:
    angle: np.ndarray  # cascaded angle at fixed curvature, Q̄
    curvature: np.ndarray  # Q̄
    vartheta: np.ndarray  # BS angle, M

    def range_coordinates(self, dset: DictionarySet, xi: OffGrid) -> tuple[np.ndarray, np.ndarray]:
        """Gradients w.r.t. (angle at fixed range, range); range part is 0 on the far ring."""
        ang, curv = dset.ris_params(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (1 - ang**2) / curv
            g_r = np.where(curv > 0, -self.curvature * curv / r, 0.0)
            g_a = np.where(curv > 0, self.angle - self.curvature * 2 * ang / r, self.angle)
        return g_a, g_r


@dataclass
class OffGridState:
    xi: OffGrid
    trace: list = field(default_factory=list)  # (sweep, L, |grad|, accepted steps)
    failed: int = 0


def _residual(Y: np.ndarray, op: SensingOperator, x_hat: np.ndarray) -> np.ndarray:
    return Y - op.F @ unvec(x_hat, op.M, op.Q_bar) @ op.B


def ml_objective(Y: np.ndarray, E: np.ndarray, Phi_hat: np.ndarray, x_hat: np.ndarray,
                 xi: OffGrid, dset: DictionarySet) -> float:
    """``-Σ_p ||y_p - F_p (Q̄_V ⊗ F_M) x̂||²`` with ``Y`` the M x P observation."""
    op = SensingOperator(dset, E, Phi_hat, xi)
    R = _residual(Y, op, x_hat)
    return -float(np.vdot(R, R).real)


def ml_gradient(Y: np.ndarray, E: np.ndarray, Phi_hat: np.ndarray, x_hat: np.ndarray,
                xi: OffGrid, dset: DictionarySet) -> MLGradient:
    op = SensingOperator(dset, E, Phi_hat, xi)
    R = _residual(Y, op, x_hat)
    X = unvec(x_hat, op.M, op.Q_bar)
    U = op.F @ X
    k = dset.geom.wavenumber
    tN = np.arange(dset.geom.N) * dset.geom.d
    tM = np.arange(op.M) * dset.geom.d
    Qm = op.Qp * op.mask
    dB_ang = ((-1j * k * tN)[:, None] * Qm).T @ E
    dB_curv = ((0.5j * k * tN**2)[:, None] * Qm).T @ E
    Rc = R.conj()
    g_ang = 2 * np.real(np.einsum("mq,mp,qp->q", U, Rc, dB_ang))
    g_curv = 2 * np.real(np.einsum("mq,mp,qp->q", U, Rc, dB_curv))
    dF = (-1j * k * tM)[:, None] * op.F
    g_bs = 2 * np.real(np.einsum("am,ap,mp->m", dF, Rc, X @ op.B))
    return MLGradient(g_ang, g_curv, g_bs)


def refine(Y: np.ndarray, E: np.ndarray, Phi_hat: np.ndarray, x_hat: np.ndarray, xi: OffGrid,
           dset: DictionarySet, n_sweeps: int = 1, fraction: float = 0.95,
           columns: np.ndarray | None = None, armijo: float = 1e-4, shrink: float = 0.5,
           max_halvings: int = 30) -> OffGridState:
    """Sequential sweeps: cascaded angles, then curvatures, then BS angles.

    Offsets of columns and BS rows that are not active in ``x̂`` are reset to
    zero; active ones persist from ``xi``.
    """
    M, Q_bar = dset.M, dset.Q_bar
    geom = dset.geom
    k = geom.wavenumber
    X = unvec(x_hat, M, Q_bar)
    cols = active_columns(x_hat, M, fraction) if columns is None else np.asarray(columns)
    rows = np.unique(np.argmax(np.abs(X[:, cols]), axis=0)) if len(cols) else np.zeros(0, int)

    new = OffGrid.zeros(M, Q_bar)
    new.delta_angle[cols] = xi.delta_angle[cols]
    new.delta_curv[cols] = xi.delta_curv[cols]
    new.delta_vartheta[rows] = xi.delta_vartheta[rows]

    op = SensingOperator(dset, E, Phi_hat, new)
    R = np.ascontiguousarray(_residual(Y, op, x_hat))
    state = OffGridState(new)
    L = -float(np.vdot(R, R).real)
    state.trace.append((0, L, 0.0, 0))
    if len(cols) == 0:
        return state

    tN = np.arange(geom.N) * geom.d
    tM = np.arange(M) * geom.d
    t_mid = dset.aperture_mid
    U = np.ascontiguousarray(op.F @ X[:, cols])
    mask = np.ascontiguousarray(op.mask[:, cols])
    Ec = np.ascontiguousarray(E, dtype=complex)
    grid_ang = dset.grid.angles[cols]
    grid_curv = dset.grid.curvature[cols]
    h_a, h_c, h_b = dset.angle_half_cell, dset.curv_half_cell, dset.bs_half_cell

    for sweep in range(1, n_sweeps + 1):
        accepted = 0
        grad = ml_gradient(Y, E, Phi_hat, x_hat, new, dset)
        gnorm = float(np.sqrt(np.sum(grad.angle[cols] ** 2) + np.sum(grad.curvature[cols] ** 2)
                              + np.sum(grad.vartheta[rows] ** 2)))
        ang = grid_ang + new.delta_angle[cols]
        curv = grid_curv + new.delta_curv[cols]
        # cascaded angle; the clamp is on the offset of the aperture-centre angle
        off = new.delta_angle[cols] - t_mid * new.delta_curv[cols]
        _, status = kernels.ris_sweep(R, U, mask, Ec, tN, k, ang, curv, 1.0, 0.0,
                                      -h_a - off, h_a - off, 2 * h_a, armijo, shrink, max_halvings)
        accepted += int(np.sum(status == 1))
        state.failed += int(np.sum(status == -1))
        # curvature, moving the reference angle so the centre angle stays put
        dc = curv - grid_curv
        _, status = kernels.ris_sweep(R, U, mask, Ec, tN, k, ang, curv, t_mid, 1.0,
                                      np.maximum(-h_c - dc, -curv), h_c - dc, 2 * h_c,
                                      armijo, shrink, max_halvings)
        accepted += int(np.sum(status == 1))
        state.failed += int(np.sum(status == -1))
        new.delta_angle[cols] = ang - grid_ang
        new.delta_curv[cols] = curv - grid_curv
        # BS angles; the row signals use the updated cascaded columns
        op = SensingOperator(dset, E, Phi_hat, new)
        Wrows = np.ascontiguousarray((X @ op.B)[rows])
        base = dset.bs_angles[rows]
        bs_ang = base + new.delta_vartheta[rows]
        d_bs = new.delta_vartheta[rows]
        _, status = kernels.bs_sweep(R, Wrows, tM, k, bs_ang,
                                     np.maximum(-h_b - d_bs, -1 - bs_ang),
                                     np.minimum(h_b - d_bs, 1 - bs_ang),
                                     2 * h_b, armijo, shrink, max_halvings)
        new.delta_vartheta[rows] = bs_ang - base
        accepted += int(np.sum(status == 1))
        state.failed += int(np.sum(status == -1))
        if sweep < n_sweeps:
            op = SensingOperator(dset, E, Phi_hat, new)
            U = np.ascontiguousarray(op.F @ X[:, cols])
        L = -float(np.vdot(R, R).real)
        state.trace.append((sweep, L, gnorm, accepted))
        if accepted == 0:
            break
    return state
