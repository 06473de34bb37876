"""Closed-form calculus on Gaussian laws.

KL divergences, entropies, marginals/conditionals and the exact one-step law
of the Gibbs kernels when the current law is Gaussian.  Determinants and
inverses always go through Cholesky factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import DimensionError, NumericalError, UnsupportedError
from .targets import LOG_2PI, BlockStructure, GaussianTarget, symmetric_eigvalsh


def _chol(S, what="covariance"):
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


class GaussianLaw:
    """``N(mean, covariance)``."""

    def __init__(self, mean, covariance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        self.mean = mean
        self.covariance = 0.5 * (cov + cov.T)

    def __repr__(self):
        return f"GaussianLaw(d={self.dim})"

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return _chol(self.covariance)

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())

    @cached_property
    def precision(self) -> np.ndarray:
        P = linalg.cho_solve((self.chol, True), np.eye(self.dim))
        return 0.5 * (P + P.T)

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = linalg.solve_triangular(self.chol, (x - self.mean).T, lower=True)
        return -0.5 * (np.einsum("ij,ij->j", z, z) + self.dim * LOG_2PI + self.logdet)

    def sample(self, rng, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self.chol.T

    def affine(self, A, b) -> "GaussianLaw":
        """Law of ``A X + b``."""
        A = np.atleast_2d(A)
        return GaussianLaw(A @ self.mean + b, A @ self.covariance @ A.T)


@dataclass
class GaussianMixture:
    weights: np.ndarray
    components: list

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1 or len(self.components) != w.size:
            raise DimensionError("mixture components must share a dimension")
        self.weights = w

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def logpdf(self, x, chunk: int = 200_000) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0])
        logw = np.log(self.weights)
        for start in range(0, x.shape[0], chunk):
            xs = x[start:start + chunk]
            comp = np.stack([lw + c.logpdf(xs) for lw, c in zip(logw, self.components)])
            out[start:start + chunk] = logsumexp(comp, axis=0)
        return out

    def sample(self, rng, n: int) -> np.ndarray:
        labels = rng.choice(self.weights.size, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, c in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            out[idx] = c.sample(rng, idx.size)
        return out

    @property
    def mean(self) -> np.ndarray:
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def covariance(self) -> np.ndarray:
        m = self.mean
        return sum(
            w * (c.covariance + np.outer(c.mean - m, c.mean - m))
            for w, c in zip(self.weights, self.components)
        )


def _law(obj) -> GaussianLaw:
    if isinstance(obj, GaussianLaw):
        return obj
    if isinstance(obj, GaussianTarget):
        return obj.law()
    raise TypeError(f"expected a GaussianLaw or GaussianTarget, got {type(obj).__name__}")


# ---------------------------------------------------------------------------
# divergences and functionals
# ---------------------------------------------------------------------------


def kl_gaussian(mu, nu) -> float:
    """``KL(mu | nu)`` for Gaussian laws."""
    mu, nu = _law(mu), _law(nu)
    if mu.dim != nu.dim:
        raise DimensionError(f"dimension mismatch {mu.dim} vs {nu.dim}")
    M = linalg.solve_triangular(nu.chol, mu.chol, lower=True)
    dm = linalg.solve_triangular(nu.chol, nu.mean - mu.mean, lower=True)
    kl = 0.5 * (np.sum(M * M) + dm @ dm - mu.dim + nu.logdet - mu.logdet)
    return float(max(kl, 0.0))


def entropy_gaussian(law) -> float:
    """``int log mu dmu = -0.5 log((2 pi e)^d det Sigma)`` (sign convention: negative differential entropy)."""
    law = _law(law)
    return float(-0.5 * (law.dim * (LOG_2PI + 1.0) + law.logdet))


def potential_energy_gaussian(law, target: GaussianTarget) -> float:
    """``int U dmu`` with ``U`` normalised so that ``exp(-U)`` is the target density."""
    law = _law(law)
    Q = target.precision
    r = law.mean - target.mean
    return float(0.5 * (np.sum(Q * law.covariance) + r @ Q @ r) + target.log_normalizer)


# ---------------------------------------------------------------------------
# marginals and conditionals
# ---------------------------------------------------------------------------


def marginal_keep(law, idx) -> GaussianLaw:
    law = _law(law)
    idx = np.asarray(idx, dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= law.dim:
        raise IndexError("marginal index set out of range")
    return GaussianLaw(law.mean[idx], law.covariance[np.ix_(idx, idx)])


def marginal_drop_block(law, m: int, blocks: BlockStructure | None = None) -> GaussianLaw:
    law = _law(law)
    blocks = blocks or BlockStructure.unit(law.dim)
    return marginal_keep(law, blocks.complement([m]))


@dataclass
class AffineConditional:
    """``X_S | X_{-S} = z  ~  N(intercept + gain @ z, covariance)``."""

    keep: np.ndarray
    given: np.ndarray
    gain: np.ndarray
    intercept: np.ndarray
    covariance: np.ndarray

    def mean_at(self, z) -> np.ndarray:
        return self.intercept + self.gain @ np.asarray(z)


def conditional_of(law, keep) -> AffineConditional:
    """Conditional law of ``X[keep]`` given the remaining coordinates (covariance form)."""
    law = _law(law)
    keep = np.asarray(keep, dtype=int)
    given = np.setdiff1d(np.arange(law.dim), keep)
    S = law.covariance
    Skk, Skg, Sgg = S[np.ix_(keep, keep)], S[np.ix_(keep, given)], S[np.ix_(given, given)]
    if given.size:
        gain = linalg.cho_solve((_chol(Sgg), True), Skg.T).T
    else:
        gain = np.zeros((keep.size, 0))
    cov = Skk - gain @ Skg.T
    intercept = law.mean[keep] - gain @ law.mean[given]
    return AffineConditional(keep, given, gain, intercept, 0.5 * (cov + cov.T))


def expected_conditional_kl(mu, nu, keep) -> float:
    """``E_{X_{-S} ~ mu_{-S}} KL(mu(.|X_{-S}) | nu(.|X_{-S}))`` in closed form."""
    mu, nu = _law(mu), _law(nu)
    cm, cn = conditional_of(mu, keep), conditional_of(nu, keep)
    given = cm.given
    Ln = _chol(cn.covariance, "conditional covariance")
    Lm = _chol(cm.covariance, "conditional covariance")
    k = cm.keep.size
    M = linalg.solve_triangular(Ln, Lm, lower=True)
    gdiff = cm.gain - cn.gain
    at_mean = cm.mean_at(mu.mean[given]) - cn.mean_at(mu.mean[given])
    v = linalg.solve_triangular(Ln, at_mean, lower=True)
    G = linalg.solve_triangular(Ln, gdiff, lower=True)
    spread = np.sum((G @ mu.covariance[np.ix_(given, given)]) * G) if given.size else 0.0
    logdet_n = 2.0 * np.log(np.diag(Ln)).sum()
    logdet_m = 2.0 * np.log(np.diag(Lm)).sum()
    return float(0.5 * (np.sum(M * M) + v @ v + spread - k + logdet_n - logdet_m))


def gaussian_conditional(Q, mean, blocks, S, x_complement):
    """Conditional of the blocks ``S`` of ``N(mean, Q^{-1})`` given the rest.

    Returns ``(conditional mean, conditional precision Q_SS)``; the mean is
    ``x*_S - Q_SS^{-1} Q_{S,-S} (x_{-S} - x*_{-S})``.
    """
    Q = np.asarray(Q, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if not isinstance(blocks, BlockStructure):
        blocks = BlockStructure(tuple(blocks))
    S = [S] if np.isscalar(S) else list(S)
    keep = blocks.indices(S)
    given = blocks.complement(S)
    x_complement = np.asarray(x_complement, dtype=float)
    if x_complement.shape != (given.size,):
        raise DimensionError(f"conditioning vector must have shape ({given.size},)")
    Qss = Q[np.ix_(keep, keep)]
    try:
        c = linalg.cho_factor(Qss, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("conditional precision block is singular") from exc
    shift = linalg.cho_solve(c, Q[np.ix_(keep, given)] @ (x_complement - mean[given]))
    return mean[keep] - shift, Qss


# ---------------------------------------------------------------------------
# exact one-step laws
# ---------------------------------------------------------------------------


def _regression(target: GaussianTarget, keep):
    """``x_S' = x*_S + C (x_{-S} - x*_{-S}) + noise`` with ``noise ~ N(0, Q_SS^{-1})``."""
    Q = target.precision
    given = np.setdiff1d(np.arange(target.dim), keep)
    Qss = Q[np.ix_(keep, keep)]
    cf = linalg.cho_factor(Qss, lower=True)
    C = -linalg.cho_solve(cf, Q[np.ix_(keep, given)])
    noise = linalg.cho_solve(cf, np.eye(keep.size))
    return given, C, 0.5 * (noise + noise.T)


def block_update_law(mu, target: GaussianTarget, S) -> GaussianLaw:
    """Law of ``X P_S`` when ``X ~ mu``: blocks ``S`` redrawn from pi's conditional."""
    mu = _law(mu)
    S = [S] if np.isscalar(S) else list(S)
    keep = target.blocks.indices(S)
    given, C, noise = _regression(target, keep)
    mean = mu.mean.copy()
    mean[keep] = target.mean[keep] + C @ (mu.mean[given] - target.mean[given])
    cov = mu.covariance.copy()
    Sgg = mu.covariance[np.ix_(given, given)]
    cross = C @ Sgg
    cov[np.ix_(keep, given)] = cross
    cov[np.ix_(given, keep)] = cross.T
    cov[np.ix_(keep, keep)] = cross @ C.T + noise
    return GaussianLaw(mean, cov)


def gs_one_step_law(mu, target: GaussianTarget) -> GaussianMixture:
    """``mu P^GS`` as the equal-weight mixture of the ``M`` single-block updates."""
    mu = _law(mu)
    if mu.dim != target.dim:
        raise DimensionError("law and target dimensions differ")
    M = target.blocks.n_blocks
    comps = [block_update_law(mu, target, m) for m in range(M)]
    return GaussianMixture(np.full(M, 1.0 / M), comps)


def frame_update_law(mu, target: GaussianTarget, V) -> GaussianLaw:
    """Law after resampling pi restricted to ``x + span(V)`` (one Hit-and-Run move)."""
    mu = _law(mu)
    V = np.asarray(getattr(V, "columns", V), dtype=float)
    Q = target.precision
    P = V.T @ Q @ V
    cf = linalg.cho_factor(P, lower=True)
    K = V @ linalg.cho_solve(cf, V.T @ Q)  # x' = (I - K) x + K x* + V N(0, P^{-1})
    A = np.eye(target.dim) - K
    noise = V @ linalg.cho_solve(cf, V.T)
    mean = A @ mu.mean + K @ target.mean
    cov = A @ mu.covariance @ A.T + noise
    return GaussianLaw(mean, cov)


# ---------------------------------------------------------------------------
# spectral quantities
# ---------------------------------------------------------------------------


def _unit_blocks(blocks, d):
    if blocks is None:
        return
    if not isinstance(blocks, BlockStructure):
        blocks = BlockStructure(tuple(blocks))
    if not blocks.is_unit or blocks.total_dim != d:
        raise UnsupportedError("only unit blocks (M = d) are supported")


def amit_gap(Q, blocks=None) -> float:
    """Exact spectral gap of random-scan Gibbs on ``N(., Q^{-1})``: ``lambda_min(D^-1/2 Q D^-1/2)/d``."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    _unit_blocks(blocks, d)
    s = 1.0 / np.sqrt(np.diag(Q))
    return float(symmetric_eigvalsh(s[:, None] * Q * s[None, :])[0] / d)


def slowest_linear_functional(Q) -> np.ndarray:
    """Coefficients ``a`` of the linear functional ``a^T x`` that relaxes at the gap rate.

    Gibbs maps coefficient vectors by ``a -> (I - Q D^{-1}/d) a``; the slowest
    eigenvector is ``D^{1/2} u`` with ``u`` the bottom eigenvector of
    ``D^{-1/2} Q D^{-1/2}``.
    """
    Q = np.asarray(Q, dtype=float)
    dq = np.sqrt(np.diag(Q))
    _, U = linalg.eigh(Q / np.outer(dq, dq))
    a = dq * U[:, 0]
    return a / np.linalg.norm(a)


def conditional_variance_sum(Q, v) -> tuple:
    """``(sum_m E Var(v^T X | X_{-m}), Var(v^T X))`` for ``X ~ N(., Q^{-1})``."""
    Q = np.asarray(Q, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != (Q.shape[0],):
        raise DimensionError("functional has the wrong dimension")
    try:
        cf = linalg.cho_factor(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("precision matrix is singular") from exc
    total = float(np.sum(v * v / np.diag(Q)))
    var = float(v @ linalg.cho_solve(cf, v))
    return total, var


def projected_law(law, frame) -> GaussianLaw:
    """Law of ``V^T X`` (coordinates of the projection onto ``span(V)``)."""
    law = _law(law)
    V = np.asarray(getattr(frame, "columns", frame), dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != law.dim:
        raise DimensionError(f"frame has {V.shape[0]} rows, law has dimension {law.dim}")
    return GaussianLaw(V.T @ law.mean, V.T @ law.covariance @ V)


def product_law(means: Sequence[float], variances: Sequence[float]) -> GaussianLaw:
    return GaussianLaw(np.asarray(means, float), np.diag(np.asarray(variances, float)))


def random_law(rng, d: int, spread: float = 1.0) -> GaussianLaw:
    """A random non-degenerate Gaussian law (used by verification suites)."""
    A = rng.standard_normal((d, d)) / math.sqrt(d)
    cov = A @ A.T + np.diag(np.exp(rng.uniform(-1.0, 1.0, size=d)))
    return GaussianLaw(spread * rng.standard_normal(d), cov)
