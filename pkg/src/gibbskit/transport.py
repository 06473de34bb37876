"""Triangular (Knothe-Rosenblatt) transport maps and their entropy calculus.

Between Gaussians the map is affine, ``T(x) = b + A x`` with ``A`` lower
triangular, so pushforwards, entropies and potential energies are exact.
For general two-dimensional densities :func:`kr_map_grid_2d` builds the map
by inverting conditional CDFs on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, DimensionError, DomainError, NumericalError
from .gaussian import GaussianLaw, _law, entropy_gaussian, potential_energy_gaussian
from .targets import BlockStructure, GaussianTarget


class AffineTriangularMap:
    """``T(x) = shift + matrix @ x`` with ``matrix`` lower triangular, positive diagonal."""

    def __init__(self, matrix, shift=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"matrix must be square, got {A.shape}")
        if np.any(np.triu(A, 1) != 0.0):
            raise ConfigError("matrix must be lower triangular")
        if not np.all(np.diag(A) > 0.0):
            raise ConfigError("matrix must have a strictly positive diagonal")
        b = np.zeros(A.shape[0]) if shift is None else np.asarray(shift, dtype=float)
        if b.shape != (A.shape[0],):
            raise DimensionError("shift has the wrong dimension")
        self.matrix = A
        self.shift = b

    def __repr__(self):
        return f"AffineTriangularMap(d={self.dim})"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.shift

    def inverse(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return linalg.solve_triangular(self.matrix, (y - self.shift).T, lower=True).T

    def compose(self, inner: "AffineTriangularMap") -> "AffineTriangularMap":
        """``self o inner``."""
        return AffineTriangularMap(self.matrix @ inner.matrix, self.matrix @ inner.shift + self.shift)

    @property
    def logdet(self) -> float:
        return float(np.log(np.diag(self.matrix)).sum())

    def block_logdets(self, blocks: BlockStructure) -> np.ndarray:
        out = []
        for m in range(blocks.n_blocks):
            sl = blocks.block_slice(m)
            out.append(np.log(np.diag(self.matrix[sl, sl])).sum())
        return np.array(out)


def kr_map_gaussian(mu, nu) -> AffineTriangularMap:
    """Knothe-Rosenblatt map pushing ``mu`` to ``nu``: ``A = L_nu L_mu^{-1}``."""
    mu, nu = _law(mu), _law(nu)
    if mu.dim != nu.dim:
        raise DimensionError("laws have different dimensions")
    Linv = linalg.solve_triangular(mu.chol, np.eye(mu.dim), lower=True)
    A = np.tril(nu.chol @ Linv)
    return AffineTriangularMap(A, nu.mean - A @ mu.mean)


def pushforward_law(T: AffineTriangularMap, mu) -> GaussianLaw:
    mu = _law(mu)
    return GaussianLaw(T.shift + T.matrix @ mu.mean, T.matrix @ mu.covariance @ T.matrix.T)


def pushforward_entropy(T: AffineTriangularMap, mu) -> float:
    """Entropy of ``T # mu`` by change of variables: ``H(mu) - log det A``."""
    return entropy_gaussian(mu) - T.logdet


def partial_map(T: AffineTriangularMap, m: int, t: float = 1.0,
                blocks: BlockStructure | None = None) -> AffineTriangularMap:
    """Map moving only block ``m``: ``x_m -> (1 - t) x_m + t T_m(x)``."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError("t must lie in [0, 1]")
    blocks = blocks or BlockStructure.unit(T.dim)
    sl = blocks.block_slice(m)
    A = np.eye(T.dim)
    b = np.zeros(T.dim)
    A[sl, :] = (1.0 - t) * A[sl, :] + t * T.matrix[sl, :]
    b[sl] = t * T.shift[sl]
    return AffineTriangularMap(np.tril(A), b)


def interpolated_map(T: AffineTriangularMap, t: float) -> AffineTriangularMap:
    """``(1 - t) Id + t T``."""
    return AffineTriangularMap((1.0 - t) * np.eye(T.dim) + t * T.matrix, t * T.shift)


def entropy_along_path(T: AffineTriangularMap, mu, t_grid: Sequence[float]) -> np.ndarray:
    """``H(((1 - t) Id + t T) # mu)`` for each ``t`` in ``t_grid``."""
    h0 = entropy_gaussian(mu)
    diag = np.diag(T.matrix)
    out = []
    for t in t_grid:
        if not 0.0 <= t <= 1.0:
            raise ConfigError("path parameters must lie in [0, 1]")
        dt = (1.0 - t) + t * diag
        if np.any(dt <= 0.0):
            raise NumericalError("interpolated map lost monotonicity")
        out.append(h0 - np.log(dt).sum())
    return np.array(out)


# ---------------------------------------------------------------------------
# averaged partial-map functionals
# ---------------------------------------------------------------------------


def averaged_partial_entropy(T, mu, t: float = 1.0, blocks=None) -> float:
    """``(1/M) sum_m H(T^m_t # mu)``."""
    blocks = blocks or BlockStructure.unit(T.dim)
    vals = [pushforward_entropy(partial_map(T, m, t, blocks), mu) for m in range(blocks.n_blocks)]
    return float(np.mean(vals))


def averaged_partial_potential(mu, target: GaussianTarget, t: float) -> float:
    """``(1/M) sum_m U(T^m_t # mu)`` with ``T`` the map from ``mu`` to the target."""
    mu = _law(mu)
    T = kr_map_gaussian(mu, target.law())
    blocks = target.blocks
    vals = [
        potential_energy_gaussian(pushforward_law(partial_map(T, m, t, blocks), mu), target)
        for m in range(blocks.n_blocks)
    ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# two-dimensional grid maps
# ---------------------------------------------------------------------------


def _cdf_pair(w, dx):
    """Trapezoid CDF and survival function (both strictly monotone for positive ``w``)."""
    inc = 0.5 * (w[..., 1:] + w[..., :-1]) * dx
    zeros = np.zeros(w.shape[:-1] + (1,))
    F = np.concatenate([zeros, np.cumsum(inc, axis=-1)], axis=-1)
    S = np.concatenate([np.cumsum(inc[..., ::-1], axis=-1)[..., ::-1], zeros], axis=-1)
    total = F[..., -1:]
    return F / total, S / total


def _quantile_map(x, F_src, S_src, y, F_dst, S_dst):
    """Monotone piecewise-linear ``G^{-1} o F`` on nodes ``x`` -> values in ``y``.

    The lower half goes through the CDFs and the upper half through the
    survival functions so that rounding near 1 cannot flatten the map.
    """
    low = F_src <= 0.5
    out = np.empty_like(x)
    out[low] = np.interp(F_src[low], F_dst, y)
    out[~low] = np.interp(S_src[~low], S_dst[::-1], y[::-1])
    return out


@dataclass
class GridMap2D:
    """Triangular map on a regular grid: ``(x1, x2) -> (t1(x1), t2(x1, x2))``."""

    x1: np.ndarray
    x2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    box: tuple
    target_box: tuple

    def __post_init__(self):
        # ties at floating-point resolution in the far tails are tolerated
        if np.any(np.diff(self.t1) < 0):
            raise NumericalError("first component of the grid map is decreasing somewhere")
        if np.any(np.diff(self.t2, axis=1) < 0):
            raise NumericalError("a conditional row of the grid map is decreasing somewhere")

    @property
    def n(self) -> int:
        return self.x1.size

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        y1 = np.interp(pts[:, 0], self.x1, self.t1)
        h1 = self.x1[1] - self.x1[0]
        h2 = self.x2[1] - self.x2[0]
        u = np.clip((pts[:, 0] - self.x1[0]) / h1, 0, self.n - 1 - 1e-12)
        i = np.floor(u).astype(int)
        a = u - i
        v = np.clip((pts[:, 1] - self.x2[0]) / h2, 0, self.x2.size - 1 - 1e-12)
        j = np.floor(v).astype(int)
        b = v - j
        row_i = self.t2[i, j] * (1 - b) + self.t2[i, j + 1] * b
        row_n = self.t2[i + 1, j] * (1 - b) + self.t2[i + 1, j + 1] * b
        return np.column_stack([y1, (1 - a) * row_i + a * row_n])


def _grid(box, n):
    (a1, b1), (a2, b2) = box
    return np.linspace(a1, b1, n), np.linspace(a2, b2, n)


def _eval_density(density, g1, g2):
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    w = np.asarray(density(np.column_stack([X1.ravel(), X2.ravel()])), dtype=float)
    return w.reshape(X1.shape)


def _check_leakage(density, box, n, tol, which):
    (a1, b1), (a2, b2) = box
    p1, p2 = 0.25 * (b1 - a1), 0.25 * (b2 - a2)
    wide = ((a1 - p1, b1 + p1), (a2 - p2, b2 + p2))
    m = int(1.5 * n) | 1
    g1, g2 = _grid(wide, m)
    w = _eval_density(density, g1, g2)
    inside = np.outer((g1 >= a1) & (g1 <= b1), (g2 >= a2) & (g2 <= b2))
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalError(f"density of {which} is not integrable on the grid")
    leak = 1.0 - w[inside].sum() / total
    if leak > tol:
        raise DomainError(f"{which} leaks {leak:.3g} of its mass outside the box")


def _eval_rows(density, y1, grids):
    n, k = grids.shape
    pts = np.column_stack([np.repeat(y1, k), grids.ravel()])
    return np.asarray(density(pts), dtype=float).reshape(n, k)


def _conditional_rows(density, y1, y2, width=12.0, sweeps=3):
    """Per-row grids spanning ``width`` conditional SDs around each conditional mean.

    Conditionals at extreme first coordinates may sit mostly outside the
    fixed box, so the grid is recentred a few times from the weighted moments.
    """
    n = y1.size
    grids = np.broadcast_to(y2, (n, y2.size)).copy()
    for _ in range(sweeps):
        w = _eval_rows(density, y1, grids)
        tot = w.sum(axis=1, keepdims=True)
        if np.any(~np.isfinite(tot)) or np.any(tot <= 0):
            raise NumericalError("conditional density vanished on its grid")
        c = (w * grids).sum(axis=1, keepdims=True) / tot
        sd = np.sqrt((w * (grids - c) ** 2).sum(axis=1, keepdims=True) / tot)
        sd = np.maximum(sd, 2.0 * (grids[:, 1:2] - grids[:, :1]))
        grids = c + sd * np.linspace(-width, width, y2.size)
    w = _eval_rows(density, y1, grids)
    if np.any(w <= 0):
        raise DomainError("target density must be strictly positive on its conditional grids")
    return grids, w


def kr_map_grid_2d(density_mu: Callable, density_nu: Callable, box, n: int = 512,
                   target_box=None, leak_tol: float = 1e-6) -> GridMap2D:
    """Knothe-Rosenblatt map between two positive densities on ``R^2``.

    ``density_*`` map an ``(N, 2)`` array to (possibly unnormalised) density
    values.  ``box = ((a1, b1), (a2, b2))`` is the grid for ``mu``;
    ``target_box`` (default ``box``) the one for ``nu``.
    """
    if n < 8:
        raise ConfigError("grid resolution must be at least 8")
    target_box = box if target_box is None else target_box
    _check_leakage(density_mu, box, n, leak_tol, "mu")
    _check_leakage(density_nu, target_box, n, leak_tol, "nu")
    x1, x2 = _grid(box, n)
    y1, y2 = _grid(target_box, n)
    wm = _eval_density(density_mu, x1, x2)
    wn = _eval_density(density_nu, y1, y2)
    if np.any(wm <= 0) or np.any(wn <= 0):
        raise DomainError("densities must be strictly positive on the grid")
    h1, h2 = x1[1] - x1[0], x2[1] - x2[0]
    k1, k2 = y1[1] - y1[0], y2[1] - y2[0]
    Fm, Sm = _cdf_pair(wm.sum(axis=1) * h2, h1)
    Fn, Sn = _cdf_pair(wn.sum(axis=1) * k2, k1)
    t1 = _quantile_map(x1, Fm, Sm, y1, Fn, Sn)
    # conditional of nu at the transported first coordinate, on a per-row grid
    rows_y, rows = _conditional_rows(density_nu, t1, y2)
    Fc, Sc = _cdf_pair(wm, h2)
    Gc, Hc = _cdf_pair(rows, (rows_y[:, 1] - rows_y[:, 0])[:, None])
    t2 = np.empty((n, n))
    for i in range(n):
        t2[i] = _quantile_map(x2, Fc[i], Sc[i], rows_y[i], Gc[i], Hc[i])
    return GridMap2D(x1, x2, t1, t2, box, target_box)


def gaussian_density(law: GaussianLaw) -> Callable:
    return lambda pts: np.exp(law.logpdf(pts))


def gaussian_box(law: GaussianLaw, width: float = 8.0) -> tuple:
    sd = np.sqrt(np.diag(law.covariance))
    return tuple((float(m - width * s), float(m + width * s)) for m, s in zip(law.mean, sd))
