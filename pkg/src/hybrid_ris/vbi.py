"""Sparse gain estimation: variational inference under a support / precision /
gain hierarchy with a diagonal posterior covariance and subspace-restricted
mean updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .dictionary import SensingOperator

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when the data residual blows up during gain estimation."""


@dataclass(frozen=True)
class SparsePrior3L:
    """Bernoulli support, Gamma precision per support state, Gamma noise precision."""

    a: float = 1.0
    b: float = 1.0
    a_bar: float = 1e6
    b_bar: float = 1.0
    c: float = 1e-6
    d: float = 1e-6
    lam: float | np.ndarray = 0.01

    def __post_init__(self):
        for name in ("a", "b", "a_bar", "b_bar", "c", "d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        lam = np.asarray(self.lam)
        if np.any(lam <= 0) or np.any(lam >= 1):
            raise ValueError("support probabilities must lie in (0, 1)")

    @classmethod
    def for_paths(cls, n_paths: int, M: int, Q_bar: int, **kw) -> "SparsePrior3L":
        return cls(lam=min(n_paths / (M * Q_bar), 0.5), **kw)


@dataclass
class PosteriorState:
    mu: np.ndarray
    sigma2: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    s_prob: np.ndarray
    c_tilde: float
    d_tilde: float
    S_mu: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    phi_trace: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)  # (residual, |S_mu|, <kappa>) per inner sweep

    @property
    def rho_mean(self) -> np.ndarray:
        return self.a_tilde / self.b_tilde

    @property
    def kappa_mean(self) -> float:
        return self.c_tilde / self.d_tilde

    @property
    def second_moment(self) -> np.ndarray:
        return np.abs(self.mu) ** 2 + self.sigma2


def init_state(n: int, prior: SparsePrior3L, n_obs: int, mu: np.ndarray | None = None,
               kappa: float = 1.0) -> PosteriorState:
    """Initial q(s), q(ρ), q(κ) around a starting mean.

    q(s) is set by the support rule of :func:`update_qs` applied to ``mu`` (or
    to 1 everywhere when no mean is given) and q(ρ) to the matching prior
    mixture. ``kappa`` is encoded as a Gamma with ``n_obs`` pseudo-observations.
    """
    mu = np.zeros(n, dtype=complex) if mu is None else np.asarray(mu, dtype=complex).copy()
    s = support_probability(np.abs(mu) ** 2, prior) if np.any(mu) else np.ones(n)
    return PosteriorState(
        mu=mu,
        sigma2=np.ones(n),
        a_tilde=s * prior.a + (1 - s) * prior.a_bar,
        b_tilde=s * prior.b + (1 - s) * prior.b_bar,
        s_prob=s,
        c_tilde=float(prior.c + n_obs),
        d_tilde=float((prior.c + n_obs) / kappa),
    )


def select_subspace(mu: np.ndarray, M: int, fraction: float = 0.95, n_fallback: int = 1) -> np.ndarray:
    """Indices ``m_q + M q`` of the strongest row in each dominant column.

    The dominant columns are the fewest columns of ``unvec(mu)`` whose energy
    reaches ``fraction`` of the total. An all-zero ``mu`` falls back to the
    first ``n_fallback`` columns.
    """
    U = np.asarray(mu).reshape(M, -1, order="F")
    energy = np.sum(np.abs(U) ** 2, axis=0)
    total = energy.sum()
    order = np.argsort(-energy, kind="stable")
    if total <= 0:
        cols = order[:n_fallback]
    else:
        cum = np.cumsum(energy[order])
        n_keep = int(np.searchsorted(cum, fraction * total * (1 - 1e-12))) + 1
        cols = order[:min(n_keep, len(order))]
    cols = np.sort(cols)
    rows = np.argmax(np.abs(U[:, cols]), axis=0)
    return rows + M * cols


def active_columns(mu: np.ndarray, M: int, fraction: float = 0.95) -> np.ndarray:
    """Dominant gain columns under the same energy rule as :func:`select_subspace`."""
    return np.unique(select_subspace(mu, M, fraction) // M)


def _solve_restricted(A: np.ndarray, rhs: np.ndarray, cond_limit: float = 1e12) -> np.ndarray:
    if A.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    if np.linalg.cond(A) > cond_limit:
        A = A + 1e-10 * np.real(np.trace(A)) * np.eye(A.shape[0])
    return sla.solve(A, rhs, assume_a="pos")


def quadratic_objective(u, op: SensingOperator, rho: np.ndarray, kappa: float, Dhy: np.ndarray) -> float:
    """``u^H G u - 2 κ Re(u^H D^H y)`` with ``G = diag(ρ) + κ D^H D``."""
    Du = op.apply(u)
    return float(np.real(np.vdot(u, rho * u)) + kappa * np.real(np.vdot(Du, Du))
                 - 2 * kappa * np.real(np.vdot(u, Dhy)))


def update_qx(y: np.ndarray, op: SensingOperator, prior: SparsePrior3L, state: PosteriorState,
              I_g: int = 5, fraction: float = 0.95, armijo: float = 1e-4, shrink: float = 0.5,
              max_halvings: int = 30) -> PosteriorState:
    """Diagonal-covariance update of q(x).

    The mean starts from the solve restricted to the selected subspace and then
    takes ``I_g`` steepest-descent steps on the quadratic objective, each with an
    exact-line-search trial step checked by Armijo backtracking.
    """
    rho = state.rho_mean
    kappa = state.kappa_mean
    norms = op.col_norms2()
    sigma2 = 1.0 / (rho + kappa * norms)
    Dhy = op.adjoint(y)

    S = select_subspace(state.mu, op.M, fraction)
    u = np.zeros_like(state.mu)
    A = np.diag(rho[S]) + kappa * op.gram(S)
    u[S] = kappa * _solve_restricted(A, Dhy[S])

    phi = quadratic_objective(u, op, rho, kappa, Dhy)
    trace = [phi]
    for _ in range(I_g):
        g = rho * u + kappa * (op.adjoint(op.apply(u)) - Dhy)
        gg = float(np.real(np.vdot(g, g)))
        if gg == 0:
            break
        Dg = op.apply(g)
        gGg = float(np.real(np.vdot(g, rho * g)) + kappa * np.real(np.vdot(Dg, Dg)))
        step = gg / gGg
        for _ in range(max_halvings):
            # φ is quadratic, so the trial value is exact
            trial = phi - 2 * step * gg + step**2 * gGg
            if trial <= phi - 2 * armijo * step * gg:
                break
            step *= shrink
        else:
            break
        u = u - step * g
        phi = trial
        trace.append(phi)
    return replace(state, mu=u, sigma2=sigma2, S_mu=S, phi_trace=trace)


def update_qrho(state: PosteriorState, prior: SparsePrior3L) -> PosteriorState:
    s = state.s_prob
    a_t = s * prior.a + (1 - s) * prior.a_bar + 1
    b_t = s * prior.b + (1 - s) * prior.b_bar + state.second_moment
    if np.any(b_t <= 0):
        raise FloatingPointError("non-positive Gamma rate in q(rho)")
    return replace(state, a_tilde=a_t, b_tilde=b_t)


def _log_marginal(e: np.ndarray, a: float, b: float) -> np.ndarray:
    """log of ∫ Gamma(ρ; a, b) CN(x; 0, 1/ρ) dρ at |x|² = e."""
    return np.log(a) - np.log(np.pi) + a * np.log(b) - (a + 1) * np.log(b + e)


def support_probability(e: np.ndarray, prior: SparsePrior3L) -> np.ndarray:
    """Posterior of s = 1 given a gain power ``e``, from the two Gamma marginals."""
    lam = np.asarray(prior.lam, dtype=float)
    logit = (np.log(lam) - np.log1p(-lam)
             + _log_marginal(e, prior.a, prior.b) - _log_marginal(e, prior.a_bar, prior.b_bar))
    return np.broadcast_to(0.5 * (1 + np.tanh(0.5 * logit)), np.shape(e)).copy()


def update_qs(state: PosteriorState, prior: SparsePrior3L) -> PosteriorState:
    """Support probabilities evaluated at the posterior-mean power ``|μ|²``."""
    return replace(state, s_prob=support_probability(np.abs(state.mu) ** 2, prior))


def expected_residual(y: np.ndarray, op: SensingOperator, state: PosteriorState) -> float:
    """``<||y - D x||²>`` under q(x) with diagonal covariance."""
    r = y - op.apply(state.mu)
    return float(np.real(np.vdot(r, r)) + np.sum(state.sigma2 * op.col_norms2()))


def update_qkappa(y: np.ndarray, op: SensingOperator, state: PosteriorState,
                  prior: SparsePrior3L) -> PosteriorState:
    c_t = prior.c + y.size
    d_t = prior.d + expected_residual(y, op, state)
    if d_t <= 0:
        raise FloatingPointError("non-positive Gamma rate in q(kappa)")
    return replace(state, c_tilde=c_t, d_tilde=d_t)


def run_gain_module(y: np.ndarray, op: SensingOperator, prior: SparsePrior3L, state: PosteriorState,
                    I_x: int = 10, I_g: int = 5, fraction: float = 0.95,
                    blowup: float = 10.0) -> tuple[np.ndarray, float, PosteriorState]:
    """Run ``I_x`` sweeps of q(x), q(ρ), q(s), q(κ); return ``(x̂, κ̂, state)``."""
    best = np.inf
    residuals = []
    diagnostics = []
    for _ in range(I_x):
        state = update_qx(y, op, prior, state, I_g=I_g, fraction=fraction)
        state = update_qrho(state, prior)
        state = update_qs(state, prior)
        state = update_qkappa(y, op, state, prior)
        res = float(np.linalg.norm(y - op.apply(state.mu)))
        residuals.append(res)
        diagnostics.append((res, int(len(state.S_mu)), state.kappa_mean))
        if not np.isfinite(res) or (best > 0 and res > blowup * best):
            raise DivergenceError(f"residual {res:.3e} exceeds {blowup}x its minimum {best:.3e}")
        best = min(best, res)
    state.residuals = residuals
    state.diagnostics = diagnostics
    return state.mu, state.kappa_mean, state
