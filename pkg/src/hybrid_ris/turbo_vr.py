"""Visible-region estimation: LMMSE on the real-valued bilinear model exchanging
extrinsic messages with sum-product on a per-column Markov chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .dictionary import VRSensingOperator
from .geometry import MarkovVRPrior
from .vbi import active_columns

PROB_CLAMP = 1e-12
VAR_CAP = 1e8
VAR_FLOOR = 1e-10


@dataclass
class VRBeliefState:
    columns: np.ndarray  # active gain columns Q_v
    alpha_A_pri: np.ndarray
    beta_A_pri: np.ndarray
    alpha_A_post: np.ndarray
    beta_A_post: np.ndarray
    alpha_B_pri: np.ndarray
    beta_B_pri: np.ndarray
    alpha_B_post: np.ndarray
    beta_B_post: np.ndarray
    pi_in: np.ndarray  # K x |Q_v|
    pi_out: np.ndarray
    posterior: np.ndarray
    decision: np.ndarray  # K x |Q_v|, binary


def realify(y: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stack real and imaginary parts for a model with real unknowns."""
    if D.shape[1] == 0:
        raise ValueError("no active columns to estimate visibility for")
    return np.concatenate([y.real, y.imag]), np.vstack([D.real, D.imag])


def lmmse_step(y_bar: np.ndarray, D_bar: np.ndarray, kappa: float, alpha_pri: np.ndarray,
               beta_pri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian posterior of ``v`` under ``y = D v + n``, ``n ~ N(0, I/κ)``, ``v ~ N(α, diag β)``."""
    beta_pri = np.maximum(beta_pri, VAR_FLOOR)
    A = kappa * (D_bar.T @ D_bar) + np.diag(1.0 / beta_pri)
    rhs = alpha_pri / beta_pri + kappa * (D_bar.T @ y_bar)
    try:
        cf = sla.cho_factor(A)
    except np.linalg.LinAlgError:
        A = A + 1e-10 * np.trace(A) / A.shape[0] * np.eye(A.shape[0])
        cf = sla.cho_factor(A)
    Gamma = sla.cho_solve(cf, np.eye(A.shape[0]))
    return Gamma @ rhs, np.diag(Gamma).copy()


def decorrelate(post_mean, post_var, pri_mean, pri_var) -> tuple[np.ndarray, np.ndarray]:
    """Remove the incoming Gaussian message from a posterior.

    Non-positive or non-finite extrinsic variances are replaced by ``VAR_CAP``
    with the posterior mean.
    """
    post_var = np.asarray(post_var, dtype=float)
    pri_var = np.asarray(pri_var, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = 1.0 / post_var - 1.0 / pri_var
        ext_var = 1.0 / prec
        ext_mean = ext_var * (post_mean / post_var - pri_mean / pri_var)
    bad = ~(np.isfinite(ext_var) & (ext_var > 0) & (ext_var <= VAR_CAP)) | ~np.isfinite(ext_mean)
    ext_var = np.where(bad, VAR_CAP, ext_var)
    ext_mean = np.where(bad, post_mean, ext_mean)
    return ext_mean, ext_var


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)


def input_probability(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``N(1; α, β) / (N(1; α, β) + N(0; α, β))`` in a stable form."""
    z = (2 * alpha - 1) / (2 * beta)
    return _clamp(0.5 * (1 + np.tanh(0.5 * z)))


def mp_step(alpha_pri: np.ndarray, beta_pri: np.ndarray, prior: MarkovVRPrior):
    """Sum-product on independent chains, one per column of the ``K x C`` inputs.

    Returns ``(alpha_post, beta_post, pi_out, pi_in, posterior)``.
    """
    pi_in = input_probability(alpha_pri, beta_pri)
    lf, lb = kernels.chain_messages(np.ascontiguousarray(pi_in), prior.lambda_vr, prior.p01, prior.p10)
    lf, lb = _clamp(lf), _clamp(lb)
    pi_out = _clamp(lf * lb / ((1 - lf) * (1 - lb) + lf * lb))
    post = _clamp(pi_in * pi_out / (pi_in * pi_out + (1 - pi_in) * (1 - pi_out)))
    return post, post * (1 - post), pi_out, pi_in, post


def enumerate_chain_posterior(alpha: np.ndarray, beta: np.ndarray, prior: MarkovVRPrior) -> np.ndarray:
    """Exact node marginals of one chain by summing over all 2**K states (test oracle)."""
    K = len(alpha)
    states = ((np.arange(2**K)[:, None] >> np.arange(K)[None, :]) & 1).astype(float)
    lam = prior.lambda_vr
    logw = np.log(np.where(states[:, 0] == 1, lam, 1 - lam))
    trans = np.array([[prior.p00, prior.p01], [prior.p10, prior.p11]])
    for k in range(1, K):
        with np.errstate(divide="ignore"):
            logw = logw + np.log(trans[states[:, k - 1].astype(int), states[:, k].astype(int)])
    logw = logw - np.sum((states - alpha[None, :]) ** 2 / (2 * beta[None, :]), axis=1)
    w = np.exp(logw - logw.max())
    return (w @ states) / w.sum()


def run_vr_module(y: np.ndarray, vr_op: VRSensingOperator, x_hat: np.ndarray, kappa_hat: float,
                  prior: MarkovVRPrior, I_v: int = 5, fraction: float = 0.95,
                  columns: np.ndarray | None = None) -> tuple[np.ndarray, VRBeliefState | None]:
    """Estimate the subarray visibility of the dominant gain columns.

    Columns outside the dominant set keep an all-ones visibility. Returns the
    full ``K x Q̄`` decision matrix and the belief state of the active columns.
    """
    K, Q_bar = vr_op.K, vr_op.Q_bar
    Phi = np.ones((K, Q_bar))
    cols = active_columns(x_hat, vr_op.M, fraction) if columns is None else np.asarray(columns)
    if len(cols) == 0:
        return Phi, None
    rest = np.ones((K, Q_bar))
    rest[:, cols] = 0
    y_v = y - vr_op.apply(rest.reshape(-1, order="F"))
    y_bar, D_bar = realify(y_v, vr_op.columns(cols))
    kappa_real = 2 * kappa_hat

    n = K * len(cols)
    lam = prior.lambda_vr
    a_pri = np.full(n, lam)
    b_pri = np.full(n, max(lam * (1 - lam), VAR_FLOOR))
    for _ in range(I_v):
        a_post, b_post = lmmse_step(y_bar, D_bar, kappa_real, a_pri, b_pri)
        aB_pri, bB_pri = decorrelate(a_post, b_post, a_pri, b_pri)
        shape = (K, len(cols))
        aB_post, bB_post, pi_out, pi_in, post = mp_step(
            aB_pri.reshape(shape, order="F"), bB_pri.reshape(shape, order="F"), prior)
        aB_post = aB_post.reshape(-1, order="F")
        bB_post = bB_post.reshape(-1, order="F")
        a_pri, b_pri = decorrelate(aB_post, bB_post, aB_pri, bB_pri)
        b_pri = np.maximum(b_pri, VAR_FLOOR)
        decision = (post > 0.5).astype(float)
    # a path cannot be blocked on every subarray; fall back to fully visible
    decision[:, ~decision.any(axis=0)] = 1.0

    Phi[:, cols] = decision
    state = VRBeliefState(cols, a_pri, b_pri, a_post, b_post, aB_pri, bB_pri, aB_post, bB_post,
                          pi_in, pi_out, post, decision)
    return Phi, state
