"""TS-JBE orchestration and the comparison estimators (OMP, SBL, oracle LS)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .dictionary import DictionarySet, OffGrid, SensingOperator, VRSensingOperator
from .geometry import (ChannelRealization, MarkovVRPrior, PilotObservation, SystemGeometry,
                       far_field_arv, near_field_arv)
from .refine import refine
from .tensor import unvec, vec
from .turbo_vr import run_vr_module
from .vbi import DivergenceError, SparsePrior3L, init_state, run_gain_module, select_subspace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    I_out: int = 30
    I_x: int = 10
    I_v: int = 5
    I_g: int = 5
    prior: SparsePrior3L | None = None  # None: sparsity from n_paths
    markov: MarkovVRPrior = MarkovVRPrior.from_sparsity(0.875)
    enable_vr: bool = True
    enable_offgrid: bool = True
    energy_fraction: float = 0.99
    n_paths: int = 9
    refine_sweeps: int = 1
    init_snr_db: float = 10.0
    augment: float | None = 0.99  # residual re-seeding of the gain mean; None disables
    keep_best: bool = True  # return the outer iterate with the smallest residual
    vr_restart: bool = True  # second start from a visibility guess, see tsjbe

    def __post_init__(self):
        for name in ("I_out", "I_x", "I_v", "I_g", "n_paths", "refine_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass
class EstimateResult:
    h_cascaded_hat: np.ndarray
    x_hat: np.ndarray | None = None
    Phi_s_hat: np.ndarray | None = None
    xi_hat: OffGrid | None = None
    nmse: float | None = None
    iteration_trace: list = field(default_factory=list)
    converged: bool = True
    message: str = ""


def compute_nmse(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    """``||ĥ - h||² / ||h||²``."""
    h_hat = np.asarray(h_hat)
    h_true = np.asarray(h_true)
    if h_hat.shape != h_true.shape:
        raise ValueError(f"length mismatch {h_hat.shape} vs {h_true.shape}")
    den = float(np.vdot(h_true, h_true).real)
    if den == 0:
        raise ValueError("true channel has zero norm")
    diff = h_hat - h_true
    return float(np.vdot(diff, diff).real) / den


def reconstruct(dset: DictionarySet, x: np.ndarray, Phi_s: np.ndarray | None = None,
                xi: OffGrid | None = None) -> np.ndarray:
    """``((Q(Ξ) ⊙ Φ̄) ⊗ F_M(Ξ)) x`` computed as ``vec(F X (Q ⊙ Φ̄)^T)``."""
    geom = dset.geom
    F = dset.F_M_at(xi)
    Qp = dset.Q_at(xi)
    if Phi_s is not None:
        Qp = Qp * np.repeat(Phi_s, geom.N // geom.K, axis=0)
    return vec(F @ unvec(x, dset.M, dset.Q_bar) @ Qp.T)


def _scale_of(obs: PilotObservation, N: int) -> float:
    """Amplitude that maps the gains to unit total energy (approximately)."""
    e = float(np.vdot(obs.y, obs.y).real) / (obs.M * obs.P * N)
    return np.sqrt(e) if e > 0 else 1.0


def tsjbe(obs: PilotObservation, dset: DictionarySet, config: EstimatorConfig = EstimatorConfig(),
          h_true: np.ndarray | None = None, recorder=None) -> EstimateResult:
    """Alternate gain estimation, visibility estimation and grid refinement.

    The observation is rescaled internally so that the gains have roughly unit
    energy, which is the scale the default hyperpriors are written for.
    ``recorder`` (see :class:`hybrid_ris.io.TraceRecorder`) receives the
    per-iteration diagnostics of each module of the first start.

    With ``config.vr_restart`` a second start begins from a visibility guess
    computed on the initial mean. At every outer iteration it replaces the
    first start's estimate only if it still marks some subarray blocked and
    has the smaller data residual.
    """
    M, Q_bar = dset.M, dset.Q_bar
    scale = _scale_of(obs, dset.geom.N)
    y = obs.y / scale
    E = obs.ris_phases

    Phi = np.ones((dset.geom.K, Q_bar))
    xi = OffGrid.zeros(M, Q_bar)
    op = SensingOperator(dset, E, Phi, xi)
    mf = op.adjoint(y) / op.col_norms2()
    mu = np.zeros_like(mf)
    S0 = select_subspace(mf, M, config.energy_fraction)
    mu[S0] = mf[S0]
    kappa = 10 ** (config.init_snr_db / 10) * obs.M * obs.P / max(float(np.vdot(y, y).real), 1e-300)

    runs = [_tsjbe_pass(y, E, dset, config, Phi, mu, kappa, scale, recorder)]
    if config.enable_vr and config.vr_restart:
        Phi0, _ = run_vr_module(y, VRSensingOperator(dset, E, mu, xi), mu, kappa, config.markov,
                                config.I_v, config.energy_fraction)
        if not np.all(Phi0):
            runs.append(_tsjbe_pass(y, E, dset, config, Phi0, mu, kappa, scale, None))

    result = EstimateResult(h_cascaded_hat=np.zeros(M * dset.geom.N, dtype=complex))
    if runs[0][2]:
        result.converged = False
        result.message = runs[0][2]
    runs = [r for r in runs if r[0]]
    best = None
    for it in range(max((len(r[0]) for r in runs), default=0)):
        # a start that stopped early keeps its last iterate; the restart only
        # competes while it holds a partial-visibility estimate
        cands = [(r[0][min(it, len(r[0]) - 1)], r[1][min(it, len(r[1]) - 1)]) for r in runs]
        cands = cands[:1] + [c for c in cands[1:] if not np.all(c[0][2])]
        best, row = min(cands, key=lambda c: c[0][0])
        h_hat = scale * reconstruct(dset, *best[1:])
        row = {"iteration": it + 1, "residual": scale * best[0], **row}
        if h_true is not None:
            row["nmse"] = compute_nmse(h_hat, h_true)
        result.iteration_trace.append(row)
        result.h_cascaded_hat = h_hat

    if best is not None:
        _, x, result.Phi_s_hat, result.xi_hat = best
        result.x_hat = scale * x
    if h_true is not None:
        result.nmse = compute_nmse(result.h_cascaded_hat, h_true)
    return result


def _tsjbe_pass(y, E, dset, config, Phi, mu, kappa, scale, recorder):
    """One TS-JBE start. Returns per-iteration (best-so-far, row) lists and an error message."""
    M, Q_bar = dset.M, dset.Q_bar
    n = M * Q_bar
    Y = unvec(y, M, y.size // M)
    prior = config.prior or SparsePrior3L.for_paths(config.n_paths, M, Q_bar)
    xi = OffGrid.zeros(M, Q_bar)
    x = np.zeros(n, dtype=complex)
    best = (np.inf, x, Phi, xi)
    bests, rows, message = [], [], ""
    for it in range(1, config.I_out + 1):
        op = SensingOperator(dset, E, Phi, xi)
        state = init_state(n, prior, y.size, mu=mu, kappa=kappa)
        try:
            x, kappa, state = run_gain_module(y, op, prior, state, config.I_x, config.I_g,
                                              config.energy_fraction)
        except DivergenceError as exc:
            message = f"outer iteration {it}: {exc}"
            log.warning(message)
            break
        if recorder is not None:
            recorder.gain(it, state.diagnostics, scale)
        if config.enable_vr:
            vr_op = VRSensingOperator(dset, E, x, xi)
            Phi, beliefs = run_vr_module(y, vr_op, x, kappa, config.markov, config.I_v,
                                         config.energy_fraction)
            if recorder is not None:
                recorder.vr(it, beliefs)
        if config.enable_offgrid:
            grid_state = refine(Y, E, Phi, x, xi, dset, n_sweeps=config.refine_sweeps,
                                fraction=config.energy_fraction)
            xi = grid_state.xi
            if recorder is not None:
                recorder.refine(it, grid_state.trace, scale)
        mu = x
        if config.augment:
            # paths dropped by the subspace rule cannot come back on their own;
            # re-seed the next gain module with the matched filter of the residual
            op_new = SensingOperator(dset, E, Phi, xi)
            mf = op_new.adjoint(y - op_new.apply(x)) / op_new.col_norms2()
            S_res = select_subspace(mf, M, config.augment)
            mu = x.copy()
            mu[S_res] += mf[S_res]
        res = float(np.linalg.norm(y - SensingOperator(dset, E, Phi, xi).apply(x)))
        if res < best[0] or not config.keep_best:
            best = (res, x, Phi, xi)
        bests.append(best)
        rows.append({"n_active": int(len(state.S_mu)), "kappa": kappa / scale**2})
    return bests, rows, message


def omp_baseline(obs: PilotObservation, dset: DictionarySet, sparsity: int | None = 9,
                 residual_tol: float | None = None, h_true: np.ndarray | None = None) -> EstimateResult:
    """Greedy atom selection over D1 with every RIS element assumed visible.

    Stops after ``sparsity`` atoms or once ``||r||² <= residual_tol``.
    """
    if sparsity is None and residual_tol is None:
        raise ValueError("need a sparsity budget or a residual tolerance")
    if sparsity is not None and sparsity < 1:
        raise ValueError("sparsity must be at least 1")
    op = SensingOperator(dset, obs.ris_phases)
    y = obs.y
    norms = np.sqrt(op.col_norms2())
    budget = sparsity if sparsity is not None else op.shape[1]
    support: list[int] = []
    r = y.copy()
    coef = np.zeros(0, dtype=complex)
    residuals = [float(np.linalg.norm(r))]
    for _ in range(min(budget, op.shape[0])):
        if residual_tol is not None and residuals[-1] ** 2 <= residual_tol:
            break
        corr = np.abs(op.adjoint(r)) / norms
        corr[support] = -1
        support.append(int(np.argmax(corr)))
        A = op.columns(support)
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
        r = y - A @ coef
        residuals.append(float(np.linalg.norm(r)))
    x = np.zeros(op.shape[1], dtype=complex)
    x[support] = coef
    h_hat = reconstruct(dset, x)
    res = EstimateResult(h_hat, x_hat=x, iteration_trace=[{"iteration": i, "residual": v}
                                                          for i, v in enumerate(residuals)])
    if h_true is not None:
        res.nmse = compute_nmse(h_hat, h_true)
    return res


def sbl_baseline(obs: PilotObservation, dset: DictionarySet, max_iter: int = 200, tol: float = 1e-4,
                 prune: float = 1e-8, h_true: np.ndarray | None = None) -> EstimateResult:
    """Evidence-maximizing SBL (EM updates of γ and σ²) on D1 with full visibility.

    Hyperparameters below ``prune * max(γ)`` are removed. The negative log
    evidence (up to a constant) is logged per iteration as ``cost``; EM makes
    it non-increasing. While more columns are active than there are
    observations the posterior is computed through the observation covariance
    ``σ²I + D Γ Dᴴ`` instead of the weight-space precision.
    """
    op = SensingOperator(dset, obs.ris_phases)
    y = obs.y
    n_obs, n = op.shape
    D = op.dense()
    yy = float(np.vdot(y, y).real)
    sigma2 = 0.1 * yy / n_obs
    gamma = np.full(n, yy / n_obs / float(np.mean(op.col_norms2())) * n_obs / n)
    active = np.arange(n)
    mu = np.zeros(0, dtype=complex)
    trace = []
    for it in range(max_iter):
        Da = D[:, active]
        ga = gamma[active]
        if len(active) > n_obs:
            C = sigma2 * np.eye(n_obs) + (Da * ga) @ Da.conj().T
            L = sla.cholesky(C, lower=True)
            z = sla.cho_solve((L, True), y)
            mu = ga * (Da.conj().T @ z)
            V = sla.solve_triangular(L, Da, lower=True)
            sig_diag = ga - ga**2 * np.sum(np.abs(V) ** 2, axis=0)
            logdet = 2 * np.sum(np.log(np.abs(np.diag(L))))
            quad = float(np.vdot(y, z).real)
        else:
            Dhy = Da.conj().T @ y
            cf = sla.cho_factor(Da.conj().T @ Da / sigma2 + np.diag(1.0 / ga))
            mu = sla.cho_solve(cf, Dhy) / sigma2
            sig_diag = np.real(np.diag(sla.cho_solve(cf, np.eye(len(active)))))
            logdet = (n_obs * np.log(sigma2) + np.sum(np.log(ga))
                      + 2 * np.sum(np.log(np.abs(np.diag(cf[0])))))
            quad = (yy - float(np.real(np.vdot(Dhy, mu)))) / sigma2
        resid = float(np.sum(np.abs(y - Da @ mu) ** 2))
        trace.append({"iteration": it, "cost": float(logdet + quad), "sigma2": sigma2,
                      "n_active": int(len(active)), "residual": float(np.sqrt(resid))})
        g_new = np.abs(mu) ** 2 + np.maximum(sig_diag, 0.0)
        sigma2 = (resid + sigma2 * float(np.sum(1 - sig_diag / ga))) / n_obs
        sigma2 = max(sigma2, 1e-12 * yy / n_obs)
        gamma[active] = g_new
        change = float(np.max(np.abs(g_new - ga)) / np.max(g_new))
        keep = g_new > prune * g_new.max()
        active = active[keep]
        mu = mu[keep]
        if change < tol:
            break
    x = np.zeros(n, dtype=complex)
    x[active] = mu
    h_hat = reconstruct(dset, x)
    res = EstimateResult(h_hat, x_hat=x, iteration_trace=trace,
                         converged=bool(trace) and len(trace) < max_iter)
    if h_true is not None:
        res.nmse = compute_nmse(h_hat, h_true)
    return res


def oracle_atoms(ch: ChannelRealization, geom: SystemGeometry) -> np.ndarray:
    """Cascaded-channel atoms ``vec(a_B (a_R* ⊙ a_U ⊙ φ_l)^T)`` for every path pair, exact model."""
    d, wavelength = geom.d, geom.wavelength
    paths = ch.paths
    M, N = ch.H.shape
    phi = ch.vr.expand(N)
    atoms = []
    for i in range(paths.L_RB):
        a_b = far_field_arv(M, paths.theta_B[i], d, wavelength)
        a_r = far_field_arv(N, paths.phi_R[i], d, wavelength).conj()
        for l in range(paths.L_U):
            a_u = near_field_arv(N, paths.theta_U[l], paths.r_U[l], d, wavelength, "exact")
            atoms.append(vec(np.outer(a_b, a_r * a_u * phi[:, l])))
    return np.stack(atoms, axis=1)


def oracle_ls(obs: PilotObservation, ch: ChannelRealization, geom: SystemGeometry,
              h_true: np.ndarray | None = None) -> EstimateResult:
    """Least squares on the exact path atoms with known visibility (a lower bound)."""
    atoms = oracle_atoms(ch, geom)
    M, N = ch.H.shape
    A = np.stack([vec(unvec(a, M, N) @ obs.ris_phases) for a in atoms.T], axis=1)
    coef = np.linalg.lstsq(A, obs.y, rcond=None)[0]
    h_hat = atoms @ coef
    res = EstimateResult(h_hat)
    if h_true is not None:
        res.nmse = compute_nmse(h_hat, h_true)
    return res
