"""Pure-Python reference implementations of the hot kernels.

These mirror ``_core.pyx`` loop for loop (same summation order, same random
stream consumption) so the two backends agree to rounding on every run and
bit for bit in practice.  They are slow and exist for portability and for
cross-checking the compiled module.
"""

from __future__ import annotations

import math

import numpy as np

from . import ars
from .errors import NumericalError

LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# scalar link functions (code 0: softplus, code 1: log-cosh)
# ---------------------------------------------------------------------------


def link_phi(code, z):
    if code == 0:
        if z > 0.0:
            return z + math.log1p(math.exp(-z))
        return math.log1p(math.exp(z))
    a = abs(z)
    return a + math.log1p(math.exp(-2.0 * a)) - LOG2


def link_dphi(code, z):
    if code == 0:
        return 0.5 * (1.0 + math.tanh(0.5 * z))
    return math.tanh(z)


def link_d2phi(code, z):
    if code == 0:
        s = 0.5 * (1.0 + math.tanh(0.5 * z))
        return s * (1.0 - s)
    t = math.tanh(z)
    return 1.0 - t * t


class RidgeConditional:
    """``t -> U(t, x_{-i})`` for ``U = c t^2/2 + sum_j phi(base_j + a_j t) - ya t``."""

    __slots__ = ("col", "base", "ci", "ya", "code")

    def __init__(self, col, base, ci, ya, code):
        self.col, self.base, self.ci, self.ya, self.code = col, base, ci, ya, code

    def log_density(self, t):
        u = 0.5 * self.ci * t * t - self.ya * t
        for a, b in zip(self.col, self.base):
            u += link_phi(self.code, b + a * t)
        return -u

    def deriv(self, t):
        g = self.ci * t - self.ya
        for a, b in zip(self.col, self.base):
            g += a * link_dphi(self.code, b + a * t)
        return g

    def deriv2(self, t):
        h = self.ci
        for a, b in zip(self.col, self.base):
            h += a * a * link_d2phi(self.code, b + a * t)
        return h


def ridge_conditional_draw(cond: RidgeConditional, x0: float, block_L: float, rng) -> float:
    """Exact draw from a ridge conditional: Newton mode, three-point hull, ARS."""
    scale = 1.0 / math.sqrt(block_L)
    mode = ars.conditional_mode_1d(cond.deriv, x0, scale, cond.deriv2)
    env = ars.initial_envelope(cond.log_density, mode, scale)
    x, _ = ars.ars_draw(env, cond.log_density, rng)
    return x


# ---------------------------------------------------------------------------
# batched chains
# ---------------------------------------------------------------------------


def _checkpoint_slots(checkpoints, steps):
    slot = {}
    if checkpoints is not None:
        for k, n in enumerate(checkpoints):
            slot.setdefault(int(n), []).append(k)
    return slot


def gauss_gs_run(X, Q, mean, rng, steps, checkpoints=None, functional=None, record_moves=False):
    """Single-site random-scan Gibbs on ``N(mean, Q^{-1})`` for every row of ``X``.

    Rows are advanced one after the other (replica-major) from the single
    stream ``rng``; per step: one uniform for the coordinate, one normal for
    the draw.  ``X`` is updated in place.  Returns ``(snapshots, trace,
    moves)`` where ``snapshots[r, k]`` is the state at ``checkpoints[k]``,
    ``trace[r, n]`` is ``functional . x`` after step ``n + 1`` and
    ``moves[r, n]`` the (0-based) coordinate updated at step ``n + 1``.
    """
    R, d = X.shape
    Ql = Q.tolist()
    mu = mean.tolist()
    inv_sd = [1.0 / math.sqrt(Ql[i][i]) for i in range(d)]
    slot = _checkpoint_slots(checkpoints, steps)
    K = 0 if checkpoints is None else len(checkpoints)
    snaps = np.empty((R, K, d)) if K else None
    trace = np.empty((R, steps)) if functional is not None else None
    fl = None if functional is None else [float(v) for v in functional]
    moves = np.empty((R, steps), dtype=np.int64) if record_moves else None
    for r in range(R):
        x = X[r].tolist()
        for k in slot.get(0, ()):
            snaps[r, k] = x
        for n in range(steps):
            i = int(rng.random() * d)
            z = rng.standard_normal()
            row = Ql[i]
            acc = 0.0
            for j in range(d):
                if j != i:
                    acc += row[j] * (x[j] - mu[j])
            x[i] = mu[i] - acc / row[i] + z * inv_sd[i]
            if moves is not None:
                moves[r, n] = i
            if fl is not None:
                s = 0.0
                for j in range(d):
                    s += fl[j] * x[j]
                trace[r, n] = s
            for k in slot.get(n + 1, ()):
                snaps[r, k] = x
        X[r] = x
    return snaps, trace, moves


def ridge_gs_run(X, A, c, ya, link_code, block_L, rng, steps, checkpoints=None,
                 record_moves=False):
    """Single-site random-scan Gibbs on a :class:`RidgeTarget` via ARS conditionals.

    Same conventions as :func:`gauss_gs_run` (one uniform for the
    coordinate, then the ARS uniforms).  ``ya[i] = labels . A[:, i]``;
    ``A @ x`` is tracked incrementally.
    """
    R, d = X.shape
    nr = A.shape[0]
    cols = [A[:, i].tolist() for i in range(d)]
    ya = [float(v) for v in ya]
    cl = [float(v) for v in c]
    bl = [float(v) for v in block_L]
    slot = _checkpoint_slots(checkpoints, steps)
    K = 0 if checkpoints is None else len(checkpoints)
    snaps = np.empty((R, K, d)) if K else None
    moves = np.empty((R, steps), dtype=np.int64) if record_moves else None
    for r in range(R):
        x = X[r].tolist()
        z = [0.0] * nr
        for j in range(nr):
            s = 0.0
            for i in range(d):
                s += A[j, i] * x[i]
            z[j] = s
        for k in slot.get(0, ()):
            snaps[r, k] = x
        for n in range(steps):
            i = int(rng.random() * d)
            col = cols[i]
            xi = x[i]
            base = [z[j] - col[j] * xi for j in range(nr)]
            cond = RidgeConditional(col, base, cl[i], ya[i], link_code)
            xn = ridge_conditional_draw(cond, xi, bl[i], rng)
            x[i] = xn
            for j in range(nr):
                z[j] = base[j] + col[j] * xn
            if moves is not None:
                moves[r, n] = i
            for k in slot.get(n + 1, ()):
                snaps[r, k] = x
        X[r] = x
    return snaps, None, moves


def gauss_sequence_kl(mean0, cov0, P0, logdet0, Q, mean, logdet_Q, rng, n_seq, steps):
    """KL to ``N(mean, Q^{-1})`` along random single-site update sequences.

    For each of ``n_seq`` sequences of uniformly chosen coordinates the
    Gaussian law of the chain started from ``N(mean0, cov0)`` is propagated
    exactly; ``out[s, n]`` is its KL after ``n`` updates.  The law is
    carried as (mean, covariance, precision ``P0 = cov0^{-1}``, log det
    covariance) with ``O(d^2)`` updates per step.
    """
    d = Q.shape[0]
    Ql = Q.tolist()
    mu = mean.tolist()
    out = np.empty((n_seq, steps + 1))
    for s in range(n_seq):
        m = mean0.tolist()
        S = cov0.tolist()
        P = np.asarray(P0).tolist()
        logdet = logdet0
        out[s, 0] = _kl_state(m, S, logdet, Ql, mu, logdet_Q, d)
        for n in range(steps):
            i = int(rng.random() * d)
            qii = Ql[i][i]
            row = Ql[i]
            pii = P[i][i]
            if not pii > 0.0:
                raise NumericalError("propagated precision lost positivity")
            # precision of the untouched block, then the new coupling
            for a in range(d):
                if a == i:
                    continue
                pa = P[a][i] / pii
                for b in range(d):
                    if b != i:
                        P[a][b] = P[a][b] - pa * P[i][b] + row[a] * row[b] / qii
            for a in range(d):
                P[a][i] = row[a]
                P[i][a] = row[a]
            logdet = logdet + math.log(pii) - math.log(qii)
            # mean and covariance: x_i' = mu_i - sum_j q_ij (x_j - mu_j)/q_ii + noise
            acc = 0.0
            for j in range(d):
                if j != i:
                    acc += row[j] * (m[j] - mu[j])
            m[i] = mu[i] - acc / qii
            for a in range(d):
                if a == i:
                    continue
                t = 0.0
                for j in range(d):
                    if j != i:
                        t += row[j] * S[j][a]
                S[i][a] = -t / qii
                S[a][i] = S[i][a]
            t = 0.0
            for j in range(d):
                if j != i:
                    t += row[j] * S[i][j]
            S[i][i] = -t / qii + 1.0 / qii
            out[s, n + 1] = _kl_state(m, S, logdet, Ql, mu, logdet_Q, d)
    return out


def _kl_state(m, S, logdet, Ql, mu, logdet_Q, d):
    tr = 0.0
    quad = 0.0
    for a in range(d):
        ra = Ql[a]
        da = m[a] - mu[a]
        Sa = S[a]
        for b in range(d):
            tr += ra[b] * Sa[b]
            quad += da * ra[b] * (m[b] - mu[b])
    return 0.5 * (tr + quad - d - logdet_Q - logdet)
