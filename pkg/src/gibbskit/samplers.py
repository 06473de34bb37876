"""Markov kernels as single-step transitions on a :class:`ChainState`.

Kernels: random-scan Gibbs (``gs_step``), Gibbs on random subsets of ``ell``
blocks (``gs_ell_step``), ``ell``-dimensional Hit-and-Run (``hr_ell_step``)
and Metropolis-within-Gibbs (``mwg_step``).  Every kernel draws the block
index first (one uniform, ``m = floor(u M)``) and then the update.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import ars
from ._fallback import RidgeConditional, ridge_conditional_draw
from .errors import (
    ConfigError,
    DimensionError,
    InputError,
    NumericalError,
    UnsupportedError,
)
from .gaussian import gaussian_conditional
from .targets import CompositeTarget, GaussianTarget, RidgeTarget

KERNELS = ("gs", "gs-ell", "hr", "mwg-rwm", "mwg-imh")
ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class ChainState:
    """Point ``x`` after ``step`` transitions.

    ``stream`` is the ``(seed, chain_id)`` pair naming the random substream;
    ``move`` labels the last update (block ids or frame number) and
    ``accepted`` records the last MH decision (``None`` for exact kernels).
    """

    x: np.ndarray
    step: int = 0
    stream: Optional[tuple] = None
    move: str = ""
    accepted: Optional[bool] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 1:
            raise DimensionError("state must be a vector")
        if not np.all(np.isfinite(x)):
            raise InputError("state has non-finite entries")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.step < 0:
            raise ConfigError("step must be non-negative")

    def advance(self, x, move, accepted=None) -> "ChainState":
        return replace(self, x=x, step=self.step + 1, move=move, accepted=accepted)


@dataclass(frozen=True)
class StiefelFrame:
    """``ell`` orthonormal columns in ``R^d``."""

    columns: np.ndarray

    def __post_init__(self):
        V = np.array(self.columns, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.ndim != 2 or V.shape[1] > V.shape[0] or V.shape[1] < 1:
            raise DimensionError(f"a frame needs 1 <= ell <= d columns, got shape {V.shape}")
        G = V.T @ V
        if np.abs(G - np.eye(V.shape[1])).max() > 10 * ORTHO_TOL * max(1, V.shape[0]):
            raise ConfigError("frame columns are not orthonormal")
        V.setflags(write=False)
        object.__setattr__(self, "columns", V)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def ell(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class MwGConfig:
    """Metropolis-within-Gibbs settings.

    ``proposal_kind`` is ``"rwm"`` (proposal ``N(x_m, s_m Id)``), ``"imh"``
    (proposal ``N(conditional mode, s_m Id)``) or ``"exact"`` (plain Gibbs).
    ``step_scales`` are the proposal variances ``s_m``; :meth:`default` sets
    ``1/(L_m d_m)`` for RWM and ``1/L_m`` for IMH.
    """

    proposal_kind: str
    step_scales: tuple = ()
    beta_hint: Optional[float] = None

    def __post_init__(self):
        kind = self.proposal_kind.lower()
        if kind not in ("rwm", "imh", "exact"):
            raise ConfigError(f"unknown proposal kind {self.proposal_kind!r}")
        object.__setattr__(self, "proposal_kind", kind)
        scales = tuple(float(s) for s in self.step_scales)
        if any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise ConfigError("step scales must be positive and finite")
        object.__setattr__(self, "step_scales", scales)
        if self.beta_hint is not None and not 0 < self.beta_hint <= 1:
            raise ConfigError("beta_hint must lie in (0, 1]")

    @classmethod
    def default(cls, kind: str, cn, blocks) -> "MwGConfig":
        if kind.lower() == "rwm":
            scales = [1.0 / (Lm * dm) for Lm, dm in zip(cn.block_L, blocks.block_dims)]
            beta = None
        else:
            scales = [1.0 / Lm for Lm in cn.block_L]
            beta = cn.kappa_star ** (-blocks.max_dim / 2.0) if math.isfinite(cn.kappa_star) else None
        return cls(kind, tuple(scales), beta)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _check_state(target, state):
    if state.x.shape != (target.dim,):
        raise DimensionError(f"state has dimension {state.x.size}, target {target.dim}")


def choose_block(rng, M: int) -> int:
    return min(int(rng.random() * M), M - 1)


def _block_label(blocks: Sequence[int]) -> str:
    return "+".join(str(m + 1) for m in sorted(blocks))


def _ridge_conditional(target: RidgeTarget, x, i):
    col = target.A[:, i]
    base = target.A @ x - col * x[i]
    return RidgeConditional(col.tolist(), base.tolist(), float(target.c[i]),
                            float(np.dot(target.labels, col)), target.link_code)


def _composite_conditional_draw(target: CompositeTarget, x, m, rng) -> float:
    if target.blocks.block_dims[m] != 1:
        raise UnsupportedError("composite targets need unit blocks for exact conditional draws")
    i = target.blocks.offsets[m]
    Lm = target.block_L[m]
    if isinstance(target, RidgeTarget):
        return ridge_conditional_draw(_ridge_conditional(target, x, i), x[i], Lm, rng)
    f = target.conditional_potential(x, m)
    scale = 1.0 / math.sqrt(Lm) if math.isfinite(Lm) and Lm > 0 else 1.0
    sample, _ = ars.ars_sample(lambda t: -f(t), (x[i] - scale, x[i] + scale), rng, scale=scale)
    return sample


def _gaussian_block_draw(target: GaussianTarget, x, S, rng):
    keep = target.blocks.indices(S)
    given = target.blocks.complement(S)
    mean, prec = gaussian_conditional(target.precision, target.mean, target.blocks, S, x[given])
    if keep.size == 1:
        z = rng.standard_normal()
        return keep, mean + z / math.sqrt(prec[0, 0])
    z = rng.standard_normal(keep.size)
    Lc = linalg.cholesky(prec, lower=True)
    return keep, mean + linalg.solve_triangular(Lc.T, z, lower=False)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def gs_step(target, state: ChainState, rng) -> ChainState:
    """One random-scan Gibbs update: a uniform block redrawn from its conditional."""
    _check_state(target, state)
    M = target.blocks.n_blocks
    m = choose_block(rng, M)
    x = state.x.copy()
    if isinstance(target, GaussianTarget):
        keep, val = _gaussian_block_draw(target, x, [m], rng)
        x[keep] = val
    else:
        x[target.blocks.offsets[m]] = _composite_conditional_draw(target, x, m, rng)
    return state.advance(x, _block_label([m]))


def choose_subset(rng, M: int, ell: int) -> list:
    return sorted(int(v) for v in rng.choice(M, size=ell, replace=False))


def gs_ell_step(target, state: ChainState, ell: int, rng) -> ChainState:
    """Redraw a uniformly chosen set of ``ell`` distinct blocks jointly."""
    _check_state(target, state)
    M = target.blocks.n_blocks
    if not 1 <= ell <= M:
        raise ConfigError(f"ell={ell} must lie in [1, {M}]")
    if ell == 1:
        return gs_step(target, state, rng)
    if not isinstance(target, GaussianTarget):
        raise UnsupportedError("joint conditionals of several blocks need a Gaussian target")
    S = choose_subset(rng, M, ell)
    x = state.x.copy()
    keep, val = _gaussian_block_draw(target, x, S, rng)
    x[keep] = val
    return state.advance(x, _block_label(S))


def sample_stiefel_frame(d: int, ell: int, rng) -> StiefelFrame:
    """Haar-distributed orthonormal ``ell``-frame (QR of a Gaussian matrix, positive ``diag(R)``)."""
    if not 1 <= ell <= d:
        raise ConfigError(f"ell={ell} must lie in [1, {d}]")
    G = rng.standard_normal((d, ell))
    Qf, R = np.linalg.qr(G)
    sign = np.sign(np.diag(R))
    sign[sign == 0] = 1.0
    return StiefelFrame(Qf * sign)


def hr_ell_step(target, state: ChainState, ell: int, rng) -> ChainState:
    """Hit-and-Run along a Haar ``ell``-frame through the current point."""
    _check_state(target, state)
    d = target.dim
    frame = sample_stiefel_frame(d, ell, rng)
    V = frame.columns
    x = state.x
    if isinstance(target, GaussianTarget):
        P = V.T @ target.precision @ V
        try:
            Lc = linalg.cholesky(P, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("restricted precision is singular") from exc
        shift = -linalg.cho_solve((Lc, True), V.T @ target.gradient(x))
        z = rng.standard_normal(ell)
        s = shift + linalg.solve_triangular(Lc.T, z, lower=False)
    else:
        if ell != 1:
            raise UnsupportedError("Hit-and-Run on composite targets supports ell = 1 only")
        v = V[:, 0]
        dvec = np.diag(target.condition_numbers.D)
        curv = float(np.dot(dvec, v * v))
        scale = 1.0 / math.sqrt(curv) if math.isfinite(curv) and curv > 0 else 1.0

        def line(t):
            return -target.potential(x + t * v)

        s0, _ = ars.ars_sample(line, (-scale, scale), rng, scale=scale)
        s = np.array([s0])
    return state.advance(x + V @ s, str(state.step + 1))


def mh_accept(log_target_ratio: float, log_proposal_ratio: float, rng) -> bool:
    """Accept with probability ``min(1, exp(log_target_ratio + log_proposal_ratio))``.

    One uniform is always consumed.  ``-inf`` rejects; NaN raises.
    """
    u = rng.random()
    lr = log_target_ratio + log_proposal_ratio
    if math.isnan(lr):
        raise NumericalError("Metropolis-Hastings log-ratio is NaN")
    if lr == -math.inf:
        return False
    return (math.log(u) if u > 0.0 else -math.inf) < lr


def conditional_mode(target, x, m) -> np.ndarray:
    """Mode of ``pi(. | x_{-m})`` (closed form for Gaussians, 1-D root search otherwise)."""
    if isinstance(target, GaussianTarget):
        given = target.blocks.complement([m])
        mean, _ = gaussian_conditional(target.precision, target.mean, target.blocks, [m], x[given])
        return mean
    if target.blocks.block_dims[m] != 1:
        raise UnsupportedError("composite conditional modes need unit blocks")
    i = target.blocks.offsets[m]
    Lm = target.block_L[m]
    scale = 1.0 / math.sqrt(Lm) if math.isfinite(Lm) and Lm > 0 else 1.0
    if isinstance(target, RidgeTarget):
        cond = _ridge_conditional(target, x, i)
        return np.array([ars.conditional_mode_1d(cond.deriv, x[i], scale, cond.deriv2)])
    g = target.conditional_derivative(x, m)
    return np.array([ars.conditional_mode_1d(g, x[i], scale)])


def _block_potential(target, x, m):
    """``y -> U(y, x_{-m})`` up to a constant, for a block vector ``y``."""
    sl = target.blocks.block_slice(m)
    if isinstance(target, GaussianTarget):
        Q = target.precision
        r = x - target.mean
        Qmm = Q[sl, sl]
        lin = Q[sl, :] @ r - Qmm @ r[sl]

        def f(y):
            ry = np.asarray(y) - target.mean[sl]
            return float(0.5 * ry @ Qmm @ ry + lin @ ry)

        return f
    if target.blocks.block_dims[m] == 1:
        g = target.conditional_potential(x, m)
        return lambda y: float(g(float(np.asarray(y).reshape(-1)[0])))
    z = np.array(x, dtype=float)

    def h(y):
        z[sl] = y
        return target.potential(z)

    return h


def mwg_step(target, cn, cfg: MwGConfig, state: ChainState, rng) -> ChainState:
    """Metropolis-within-Gibbs: a uniform block gets one MH move targeting its conditional."""
    _check_state(target, state)
    blocks = target.blocks
    M = blocks.n_blocks
    if cfg.proposal_kind == "exact":
        return gs_step(target, state, rng)
    if len(cfg.step_scales) != M:
        raise ConfigError(f"need {M} step scales, got {len(cfg.step_scales)}")
    m = choose_block(rng, M)
    sl = blocks.block_slice(m)
    x = state.x
    xm = x[sl]
    sd = math.sqrt(cfg.step_scales[m])
    U = _block_potential(target, x, m)
    if cfg.proposal_kind == "rwm":
        y = xm + sd * rng.standard_normal(xm.size)
        log_q = 0.0
    else:
        mode = conditional_mode(target, x, m)
        y = mode + sd * rng.standard_normal(xm.size)
        var = cfg.step_scales[m]
        log_q = 0.5 * (float(np.sum((y - mode) ** 2)) - float(np.sum((xm - mode) ** 2))) / var
    log_t = U(xm) - U(y)
    accepted = mh_accept(log_t, log_q, rng)
    if accepted:
        x = x.copy()
        x[sl] = y
    return state.advance(x, _block_label([m]), accepted)


# ---------------------------------------------------------------------------
# chains and CSV output
# ---------------------------------------------------------------------------


@dataclass
class ChainRecord:
    states: np.ndarray
    moves: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def make_step(kernel: str, target, ell: Optional[int] = None, cfg: Optional[MwGConfig] = None):
    """Return ``f(state, rng) -> state`` for a kernel name from :data:`KERNELS`."""
    if kernel == "gs":
        return lambda s, r: gs_step(target, s, r)
    if kernel == "gs-ell":
        if ell is None:
            raise ConfigError("kernel gs-ell needs ell")
        return lambda s, r: gs_ell_step(target, s, ell, r)
    if kernel == "hr":
        ell = 1 if ell is None else ell
        return lambda s, r: hr_ell_step(target, s, ell, r)
    if kernel in ("mwg-rwm", "mwg-imh"):
        cn = target.condition_numbers
        cfg = cfg or MwGConfig.default(kernel[4:], cn, target.blocks)
        return lambda s, r: mwg_step(target, cn, cfg, s, r)
    raise ConfigError(f"unknown kernel {kernel!r}; expected one of {', '.join(KERNELS)}")


def run_chain(target, kernel: str, x0, steps: int, rng, ell=None, cfg=None,
              stream=None) -> ChainRecord:
    if steps < 1:
        raise ConfigError("steps must be at least 1")
    step = make_step(kernel, target, ell, cfg)
    state = ChainState(np.asarray(x0, dtype=float), 0, stream)
    _check_state(target, state)
    out = np.empty((steps, target.dim))
    moves, acc = [], []
    for n in range(steps):
        state = step(state, rng)
        out[n] = state.x
        moves.append(state.move)
        acc.append(state.accepted)
    return ChainRecord(out, moves, acc)


def write_chain_csv(record: ChainRecord, out) -> None:
    """Columns ``step, block_or_frame_id, x_1..x_d, accepted`` (blank for exact kernels)."""
    own = isinstance(out, str) and out != "-"
    fh = open(out, "w", newline="") if own else (sys.stdout if out in (None, "-") else out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        d = record.states.shape[1]
        w.writerow(["step", "block_or_frame_id"] + [f"x_{i + 1}" for i in range(d)] + ["accepted"])
        for n, (row, mv, a) in enumerate(zip(record.states, record.moves, record.accepted)):
            flag = "" if a is None else str(int(a))
            w.writerow([n + 1, mv] + [repr(float(v)) for v in row] + [flag])
    finally:
        if own:
            fh.close()


def chain_csv_string(record: ChainRecord) -> str:
    buf = io.StringIO()
    write_chain_csv(record, buf)
    return buf.getvalue()
