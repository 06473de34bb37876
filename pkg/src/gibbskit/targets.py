"""Target distributions pi = exp(-U) with a block decomposition.

Two families are provided:

* :class:`GaussianTarget` -- ``U(x) = (x - x*)^T Q (x - x*) / 2``, everything
  in closed form.
* :class:`CompositeTarget` -- ``U(x) = U0(x) + sum_m U_m(x_m)`` given by
  callables, with the block constants ``L_m`` and ``lambda*`` supplied as
  metadata.  :class:`RidgeTarget` is the registered generalised-linear special
  case ``U(x) = sum_i c_i x_i^2 / 2 + sum_j phi(a_j^T x) - y^T A x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import ConstructionError, DimensionError, InputError, UnsupportedError

SYM_TOL = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BlockStructure:
    """Block sizes ``(d_1, ..., d_M)`` of ``R^d = R^{d_1} x ... x R^{d_M}``."""

    block_dims: tuple

    def __post_init__(self):
        dims = tuple(int(b) for b in self.block_dims)
        if not dims or any(b < 1 for b in dims):
            raise ConstructionError(f"block sizes must be positive, got {self.block_dims}")
        object.__setattr__(self, "block_dims", dims)

    @classmethod
    def unit(cls, d: int) -> "BlockStructure":
        return cls((1,) * int(d))

    @cached_property
    def offsets(self) -> tuple:
        return tuple(int(o) for o in np.concatenate(([0], np.cumsum(self.block_dims)[:-1])))

    @property
    def total_dim(self) -> int:
        return int(sum(self.block_dims))

    @property
    def n_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def is_unit(self) -> bool:
        return all(b == 1 for b in self.block_dims)

    @property
    def max_dim(self) -> int:
        return max(self.block_dims)

    def block_slice(self, m: int) -> slice:
        if not 0 <= m < self.n_blocks:
            raise IndexError(f"block index {m} out of range for M={self.n_blocks}")
        o = self.offsets[m]
        return slice(o, o + self.block_dims[m])

    def indices(self, blocks) -> np.ndarray:
        """Coordinate indices of a block index or an iterable of block indices."""
        if np.isscalar(blocks):
            blocks = [int(blocks)]
        idx = [np.arange(self.block_slice(m).start, self.block_slice(m).stop) for m in sorted(blocks)]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def complement(self, blocks) -> np.ndarray:
        mask = np.ones(self.total_dim, dtype=bool)
        mask[self.indices(blocks)] = False
        return np.flatnonzero(mask)

    def block_of(self) -> np.ndarray:
        """Block index of every coordinate."""
        return np.repeat(np.arange(self.n_blocks), self.block_dims)


def _as_blocks(blocks, d: int) -> BlockStructure:
    if blocks is None:
        return BlockStructure.unit(d)
    if not isinstance(blocks, BlockStructure):
        blocks = BlockStructure(tuple(blocks))
    if blocks.total_dim != d:
        raise DimensionError(f"blocks sum to {blocks.total_dim} but dimension is {d}")
    return blocks


def _check_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionError(f"expected a point of shape ({d},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("point has non-finite entries")
    return x


# ---------------------------------------------------------------------------
# condition numbers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionNumbers:
    """Convexity/smoothness constants of a potential.

    ``lam``/``L``/``kappa`` are the global constants; ``block_L`` the
    per-block smoothness constants, ``lambda_star`` the convexity constant in
    the norm ``||x||_L^2 = sum_m L_m ||x_m||^2`` and ``kappa_star = 1/lambda_star``.
    """

    lam: float
    L: float
    kappa: float
    block_L: tuple
    lambda_star: float
    kappa_star: float
    D: np.ndarray = field(repr=False)

    @property
    def strongly_convex(self) -> bool:
        return self.lambda_star > 0


def _kappa(num: float, den: float) -> float:
    return math.inf if den <= 0 else num / den


def symmetric_eigvalsh(Q) -> np.ndarray:
    """Ascending eigenvalues; entries below ``1e-12 * ||Q||`` in modulus are set to 0."""
    Q = np.asarray(Q, dtype=float)
    w = linalg.eigvalsh(Q)
    scale = max(np.abs(w).max(), 1e-300)
    w[np.abs(w) <= SYM_TOL * scale] = 0.0
    return w


def check_spd(Q, name: str = "precision") -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ConstructionError(f"{name} has non-finite entries")
    scale = max(np.abs(Q).max(), 1e-300)
    if np.abs(Q - Q.T).max() > SYM_TOL * scale:
        raise ConstructionError(f"{name} is not symmetric")
    Q = 0.5 * (Q + Q.T)
    try:
        linalg.cholesky(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise ConstructionError(f"{name} is not positive definite") from exc
    if symmetric_eigvalsh(Q)[0] <= 0:
        raise ConstructionError(f"{name} is numerically singular")
    return Q


def condition_numbers_gaussian(Q, blocks=None) -> ConditionNumbers:
    """Constants of ``U(x) = x^T Q x / 2`` read off the Hessian ``Q``."""
    Q = check_spd(Q)
    blocks = _as_blocks(blocks, Q.shape[0])
    w = symmetric_eigvalsh(Q)
    lam, L = float(w[0]), float(w[-1])
    block_L = tuple(
        float(symmetric_eigvalsh(Q[blocks.block_slice(m), blocks.block_slice(m)])[-1])
        for m in range(blocks.n_blocks)
    )
    dvec = np.repeat(block_L, blocks.block_dims)
    s = 1.0 / np.sqrt(dvec)
    lambda_star = float(symmetric_eigvalsh(s[:, None] * Q * s[None, :])[0])
    return ConditionNumbers(
        lam=lam,
        L=L,
        kappa=_kappa(L, lam),
        block_L=block_L,
        lambda_star=lambda_star,
        kappa_star=_kappa(1.0, lambda_star),
        D=np.diag(dvec),
    )


def weighted_norm_L(x, cn: ConditionNumbers) -> float:
    """``sqrt(sum_m L_m ||x_m||^2)``."""
    w = np.diag(cn.D)
    x = np.asarray(x, dtype=float)
    if x.shape != w.shape:
        raise DimensionError(f"expected shape {w.shape}, got {x.shape}")
    return float(math.sqrt(np.dot(w, x * x)))


# ---------------------------------------------------------------------------
# Gaussian target
# ---------------------------------------------------------------------------


class GaussianTarget:
    """``N(mean, precision^{-1})`` with a block structure."""

    kind = "gaussian"

    def __init__(self, mean, precision, blocks=None):
        Q = check_spd(precision)
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (Q.shape[0],):
            raise DimensionError(f"mean has shape {mean.shape}, precision is {Q.shape}")
        if not np.all(np.isfinite(mean)):
            raise InputError("mean has non-finite entries")
        self.mean = mean
        self.precision = Q
        self.blocks = _as_blocks(blocks, Q.shape[0])
        self.mean.setflags(write=False)
        self.precision.setflags(write=False)

    def __repr__(self):
        return f"GaussianTarget(d={self.dim}, blocks={self.blocks.block_dims})"

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        return linalg.cholesky(self.precision, lower=True)

    @cached_property
    def covariance(self) -> np.ndarray:
        cov = linalg.cho_solve((self.chol, True), np.eye(self.dim))
        return 0.5 * (cov + cov.T)

    @cached_property
    def logdet_precision(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())

    @cached_property
    def log_normalizer(self) -> float:
        """``log int exp(-U)`` for the unnormalised quadratic potential."""
        return 0.5 * (self.dim * LOG_2PI - self.logdet_precision)

    @cached_property
    def condition_numbers(self) -> ConditionNumbers:
        return condition_numbers_gaussian(self.precision, self.blocks)

    @property
    def mode(self) -> np.ndarray:
        return self.mean

    def law(self):
        from .gaussian import GaussianLaw

        return GaussianLaw(self.mean, self.covariance)

    def potential(self, x) -> float:
        r = _check_point(x, self.dim) - self.mean
        return float(0.5 * r @ self.precision @ r)

    def gradient(self, x) -> np.ndarray:
        r = _check_point(x, self.dim) - self.mean
        return self.precision @ r

    def log_density(self, x) -> np.ndarray:
        """Normalised log-density; ``x`` may be ``(d,)`` or ``(n, d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - self.mean) @ self.chol
        out = -0.5 * np.einsum("ij,ij->i", z, z) - self.log_normalizer
        return out

    def sample(self, rng, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + linalg.solve_triangular(self.chol.T, z.T, lower=False).T

    def to_dict(self) -> dict:
        return {
            "type": "gaussian",
            "mean": self.mean.tolist(),
            "precision": self.precision.tolist(),
            "blocks": list(self.blocks.block_dims),
        }


def random_precision(rng, d: int, kappa: Optional[float] = None, blocks=None) -> np.ndarray:
    """Random SPD matrix; with ``kappa`` the spectrum is log-uniform in [1, kappa]."""
    if kappa is None:
        kappa = float(np.exp(rng.uniform(0.0, math.log(50.0))))
    Qo, R = np.linalg.qr(rng.standard_normal((d, d)))
    Qo = Qo * np.sign(np.diag(R))
    if d == 1:
        eig = np.array([1.0])
    else:
        eig = np.exp(rng.uniform(0.0, math.log(kappa), size=d))
        eig[0], eig[-1] = 1.0, kappa
    Q = (Qo * eig) @ Qo.T
    return 0.5 * (Q + Q.T)


def equicorrelated_precision(d: int, rho: float) -> np.ndarray:
    """``(1 - rho) Id + rho 11^T``; with unit blocks ``kappa* = 1/(1 - rho)`` for rho > 0."""
    if not -1.0 / max(d - 1, 1) < rho < 1.0:
        raise ConstructionError(f"rho={rho} does not give an SPD matrix in dimension {d}")
    return (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))


def paired_precision(d: int, rho: float) -> np.ndarray:
    """Block-diagonal 2x2 correlated pairs; ``kappa* = 1/(1 - |rho|)`` and ``kappa`` do not grow with ``d``."""
    if d % 2 or not -1.0 < rho < 1.0:
        raise ConstructionError("paired precision needs even d and |rho| < 1")
    Q = np.eye(d)
    idx = np.arange(0, d, 2)
    Q[idx, idx + 1] = rho
    Q[idx + 1, idx] = rho
    return Q


# ---------------------------------------------------------------------------
# composite targets
# ---------------------------------------------------------------------------


class CompositeTarget:
    """``U(x) = U0(x) + sum_m U_m(x_m)`` from user callables.

    ``lambda_star`` and ``block_L`` are metadata: they are not estimated (a
    global Hessian bound cannot be certified numerically).  ``separable_parts``
    is a list of ``(U_m, grad U_m)`` pairs; ``grad`` may be ``None`` for
    non-smooth parts, in which case :meth:`gradient` is unavailable.
    """

    kind = "composite"

    def __init__(
        self,
        smooth_potential: Callable,
        smooth_gradient: Callable,
        blocks,
        separable_parts: Optional[Sequence] = None,
        block_L: Optional[Sequence[float]] = None,
        lambda_star: float = 0.0,
        lam: float = 0.0,
        L: float = math.inf,
        mode=None,
        name: str = "composite",
    ):
        if not isinstance(blocks, BlockStructure):
            blocks = BlockStructure(tuple(blocks))
        self.blocks = blocks
        self.U0 = smooth_potential
        self.grad_U0 = smooth_gradient
        if separable_parts is None:
            separable_parts = [(None, None)] * blocks.n_blocks
        if len(separable_parts) != blocks.n_blocks:
            raise DimensionError("need one separable part per block")
        self.separable_parts = list(separable_parts)
        if block_L is None:
            block_L = (math.inf,) * blocks.n_blocks
        if len(block_L) != blocks.n_blocks:
            raise DimensionError("need one smoothness constant per block")
        self.block_L = tuple(float(v) for v in block_L)
        if lambda_star < 0:
            raise ConstructionError("lambda_star must be non-negative")
        self.lambda_star = float(lambda_star)
        self.lam = float(lam)
        self.L = float(L)
        self._mode = None if mode is None else np.asarray(mode, dtype=float)
        self.name = name

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, d={self.dim})"

    @property
    def dim(self) -> int:
        return self.blocks.total_dim

    @cached_property
    def condition_numbers(self) -> ConditionNumbers:
        dvec = np.repeat(self.block_L, self.blocks.block_dims)
        return ConditionNumbers(
            lam=self.lam,
            L=self.L,
            kappa=_kappa(self.L, self.lam),
            block_L=self.block_L,
            lambda_star=self.lambda_star,
            kappa_star=_kappa(1.0, self.lambda_star),
            D=np.diag(dvec),
        )

    def potential(self, x) -> float:
        x = _check_point(x, self.dim)
        u = float(self.U0(x))
        for m, (fm, _) in enumerate(self.separable_parts):
            if fm is not None:
                u += float(fm(x[self.blocks.block_slice(m)]))
        return u

    def gradient(self, x) -> np.ndarray:
        x = _check_point(x, self.dim)
        g = np.array(self.grad_U0(x), dtype=float)
        for m, (fm, gm) in enumerate(self.separable_parts):
            if fm is None:
                continue
            if gm is None:
                raise UnsupportedError(f"separable part {m} has no gradient")
            g[self.blocks.block_slice(m)] += gm(x[self.blocks.block_slice(m)])
        return g

    def conditional_potential(self, x, m: int) -> Callable[[float], float]:
        """``t -> U(t, x_{-m})`` for a scalar block ``m`` (generic O(cost of U))."""
        if self.blocks.block_dims[m] != 1:
            raise UnsupportedError("one-dimensional conditionals need unit blocks")
        i = self.blocks.offsets[m]
        y = np.array(x, dtype=float)

        def f(t: float) -> float:
            y[i] = t
            return self.potential(y)

        return f

    def conditional_derivative(self, x, m: int) -> Callable[[float], float]:
        i = self.blocks.offsets[m]
        y = np.array(x, dtype=float)

        def g(t: float) -> float:
            y[i] = t
            return float(self.gradient(y)[i])

        return g

    @property
    def mode(self) -> np.ndarray:
        if self._mode is None:
            res = optimize.minimize(
                self.potential, np.zeros(self.dim), jac=self.gradient, method="BFGS",
                options={"gtol": 1e-10},
            )
            self._mode = res.x
        return self._mode


def _softplus(z):
    return np.logaddexp(0.0, z)


def _logcosh(z):
    a = np.abs(z)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


LINKS = {
    # name: (phi, phi', sup phi'', code used by the compiled kernels)
    "logistic": (_softplus, _sigmoid, 0.25, 0),
    "logcosh": (_logcosh, np.tanh, 1.0, 1),
}


class RidgeTarget(CompositeTarget):
    """``U(x) = sum_i c_i x_i^2/2 + sum_j [phi(a_j^T x) - y_j a_j^T x]``.

    ``phi`` is softplus (logistic regression with Gaussian prior, ``c_i =
    1/prior_scale^2``) or log-cosh.  The whole potential is put in ``U0``;
    the block constants are the Hessian bounds ``L_m = c_m + sup(phi'') *
    lambda_max(A_m^T A_m)`` and ``lambda_star`` defaults to the certified
    lower bound ``min_i c_i / L_{m(i)}`` (zero without a prior).
    """

    def __init__(self, A, link: str = "logistic", prior_precision=None, labels=None,
                 blocks=None, lambda_star: Optional[float] = None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if link not in LINKS:
            raise ConstructionError(f"unknown link {link!r}; expected one of {sorted(LINKS)}")
        r, d = A.shape
        c = np.zeros(d) if prior_precision is None else np.broadcast_to(
            np.asarray(prior_precision, dtype=float), (d,)).copy()
        y = np.zeros(r) if labels is None else np.asarray(labels, dtype=float)
        if y.shape != (r,):
            raise DimensionError(f"labels must have shape ({r},)")
        if np.any(c < 0) or not np.all(np.isfinite(A)):
            raise ConstructionError("prior precisions must be non-negative and A finite")
        if np.all(c == 0) and np.linalg.matrix_rank(A) < d:
            raise ConstructionError("improper target: A lacks full column rank and there is no prior")
        blocks = _as_blocks(blocks, d)
        self.A, self.c, self.labels, self.link = A, c, y, link
        phi, dphi, d2max, code = LINKS[link]
        self._phi, self._dphi, self.link_code = phi, dphi, code
        block_L = []
        for m in range(blocks.n_blocks):
            s = blocks.block_slice(m)
            H = np.diag(c[s]) + d2max * A[:, s].T @ A[:, s]
            block_L.append(float(symmetric_eigvalsh(H)[-1]))
        dvec = np.repeat(block_L, blocks.block_dims)
        if lambda_star is None:
            lambda_star = float(np.min(c / dvec))
        L = float(c.max() + d2max * np.linalg.norm(A, 2) ** 2)
        super().__init__(
            self._u0, self._grad, blocks, block_L=block_L, lambda_star=lambda_star,
            lam=float(c.min()), L=L, name=link,
        )

    def _u0(self, x):
        z = self.A @ x
        return 0.5 * float(np.dot(self.c * x, x)) + float(np.sum(self._phi(z)) - np.dot(self.labels, z))

    def _grad(self, x):
        z = self.A @ x
        return self.c * x + self.A.T @ (self._dphi(z) - self.labels)

    def conditional_potential(self, x, m: int):
        if self.blocks.block_dims[m] != 1:
            raise UnsupportedError("one-dimensional conditionals need unit blocks")
        i = self.blocks.offsets[m]
        a = self.A[:, i]
        base = self.A @ x - a * x[i]
        ci, ya = self.c[i], float(np.dot(self.labels, a))
        phi = self._phi

        def f(t: float) -> float:
            return 0.5 * ci * t * t + float(np.sum(phi(base + a * t))) - ya * t

        return f

    def conditional_derivative(self, x, m: int):
        i = self.blocks.offsets[m]
        a = self.A[:, i]
        base = self.A @ x - a * x[i]
        ci, ya = self.c[i], float(np.dot(self.labels, a))
        dphi = self._dphi

        def g(t: float) -> float:
            return ci * t + float(np.dot(a, dphi(base + a * t))) - ya

        return g

    def to_dict(self) -> dict:
        out = {"type": self.link, "A": self.A.tolist(), "blocks": list(self.blocks.block_dims)}
        if np.any(self.c > 0):
            if np.allclose(self.c, self.c[0]):
                out["prior_scale"] = float(1.0 / math.sqrt(self.c[0]))
            else:
                out["prior_precision"] = self.c.tolist()
        if np.any(self.labels != 0):
            out["labels"] = self.labels.tolist()
        return out


def logcosh_target_1d() -> RidgeTarget:
    """``pi(x) = 1/(pi cosh x)``: log-concave, smooth, not strongly log-concave."""
    return RidgeTarget([[1.0]], link="logcosh")


# ---------------------------------------------------------------------------
# module-level evaluators and JSON format
# ---------------------------------------------------------------------------


def potential(target, x) -> float:
    return target.potential(x)


def gradient(target, x) -> np.ndarray:
    return target.gradient(x)


def target_from_dict(spec: dict):
    kind = spec.get("type")
    blocks = spec.get("blocks")
    if kind == "gaussian":
        return GaussianTarget(spec["mean"], spec["precision"], blocks)
    if kind in LINKS:
        prior = spec.get("prior_precision")
        if prior is None and spec.get("prior_scale") is not None:
            prior = 1.0 / float(spec["prior_scale"]) ** 2
        return RidgeTarget(
            spec["A"], link=kind, prior_precision=prior, labels=spec.get("labels"),
            blocks=blocks, lambda_star=spec.get("lambda_star"),
        )
    raise ConstructionError(f"unknown target type {kind!r}")


def load_target(path):
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConstructionError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return target_from_dict(spec)
    except KeyError as exc:
        raise ConstructionError(f"{path}: missing field {exc}") from exc


def save_target(target, path) -> None:
    with open(path, "w") as fh:
        json.dump(target.to_dict(), fh, indent=1)
