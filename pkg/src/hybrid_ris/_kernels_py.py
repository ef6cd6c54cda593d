"""Pure-Python reference versions of the hot kernels.

These define the semantics; the compiled module must agree with them.
"""

from __future__ import annotations

import numpy as np


def chain_messages(pi_in: np.ndarray, lam: float, p01: float, p10: float):
    """Forward and backward messages of a binary Markov chain, one chain per column.

    ``pi_in[k, c]`` is the local evidence that node k of chain c is 1. Returns
    ``(lam_f, lam_b)`` with the forward base case ``lam`` and backward base 0.5.
    """
    pi_in = np.asarray(pi_in, dtype=float)
    K, C = pi_in.shape
    p00, p11 = 1 - p01, 1 - p10
    lf = np.empty((K, C))
    lb = np.empty((K, C))
    lf[0] = lam
    for k in range(1, K):
        pi, x = pi_in[k - 1], lf[k - 1]
        lf[k] = (p01 * (1 - pi) * (1 - x) + p11 * pi * x) / ((1 - pi) * (1 - x) + pi * x)
    lb[K - 1] = 0.5
    for k in range(K - 2, -1, -1):
        pi, x = pi_in[k + 1], lb[k + 1]
        lb[k] = (p10 * (1 - pi) * (1 - x) + p11 * pi * x) / (
            (p00 + p10) * (1 - pi) * (1 - x) + (p11 + p01) * pi * x)
    return lf, lb


def ris_sweep(R, U, mask, E, t, k, angle, curv, fa, fc, lo, hi, cell,
              armijo=1e-4, shrink=0.5, max_halvings=30):
    """Backtracking line search on one cascaded column at a time.

    Column c contributes ``outer(U[:, c], b_c)`` to the model with
    ``b_c = (a_c * mask[:, c]) @ E`` and ``a_c`` the Fresnel response at
    ``(angle[c], curv[c])``. Each column moves by ``s * (fa, fc)`` in
    (angle, curvature) with ``lo[c] <= s <= hi[c]``. ``R`` (the residual),
    ``angle`` and ``curv`` are updated in place. Returns ``(steps, status)``;
    status is 1 accepted, 0 zero gradient or clamped, -1 line search exhausted.
    """
    C = U.shape[1]
    steps = np.zeros(C)
    status = np.zeros(C, dtype=np.int64)
    dpsi = k * (-fa * t + 0.5 * fc * t**2)
    for c in range(C):
        u = U[:, c]
        a = mask[:, c] * np.exp(1j * k * (-t * angle[c] + 0.5 * t**2 * curv[c]))
        b = a @ E
        db = (1j * dpsi * a) @ E
        w = R.conj().T @ u
        uu = np.vdot(u, u).real
        g = 2 * np.real(w @ db)
        h = 2 * uu * np.vdot(db, db).real
        if g == 0 or h == 0:
            continue
        step = min(max(float(np.clip(g / h, -cell, cell)), lo[c]), hi[c])
        if step == 0:
            continue
        status[c] = -1
        for _ in range(max_halvings):
            a2 = mask[:, c] * np.exp(1j * k * (-t * (angle[c] + fa * step)
                                               + 0.5 * t**2 * (curv[c] + fc * step)))
            dB = a2 @ E - b
            gain = 2 * np.real(w @ dB) - uu * np.vdot(dB, dB).real
            if gain >= armijo * g * step:
                R -= np.outer(u, dB)
                angle[c] += fa * step
                curv[c] += fc * step
                steps[c] = step
                status[c] = 1
                break
            step *= shrink
    return steps, status


def bs_sweep(R, Wrows, t, k, angle, lo, hi, cell, armijo=1e-4, shrink=0.5, max_halvings=30):
    """Same line search for BS angles; row j contributes ``outer(f(angle[j]), Wrows[j])``."""
    J = Wrows.shape[0]
    steps = np.zeros(J)
    status = np.zeros(J, dtype=np.int64)
    for j in range(J):
        w = Wrows[j]
        f = np.exp(-1j * k * t * angle[j])
        df = -1j * k * t * f
        z = R.conj() @ w
        ww = np.vdot(w, w).real
        g = 2 * np.real(df @ z)
        h = 2 * ww * np.vdot(df, df).real
        if g == 0 or h == 0:
            continue
        step = min(max(float(np.clip(g / h, -cell, cell)), lo[j]), hi[j])
        if step == 0:
            continue
        status[j] = -1
        for _ in range(max_halvings):
            dF = np.exp(-1j * k * t * (angle[j] + step)) - f
            gain = 2 * np.real(dF @ z) - ww * np.vdot(dF, dF).real
            if gain >= armijo * g * step:
                R -= np.outer(dF, w)
                angle[j] += step
                steps[j] = step
                status[j] = 1
                break
            step *= shrink
    return steps, status
