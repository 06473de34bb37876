"""Verification harness: closed-form inequality checks, Monte Carlo estimators
with standard errors, and mixing / spectral-gap experiments.

Every check returns an :class:`InequalityReport` (or a
:class:`NonConvexReport`) and is a deterministic function of its inputs and
seed.  Suites grouping the checks are registered in :data:`SUITES` and are
what the command line runs.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from . import kernels
from .errors import ConfigError, DomainError, UnsupportedError
from .gaussian import (
    GaussianLaw,
    GaussianMixture,
    amit_gap,
    conditional_variance_sum,
    frame_update_law,
    gs_one_step_law,
    kl_gaussian,
    marginal_drop_block,
    potential_energy_gaussian,
    product_law,
    projected_law,
    random_law,
    slowest_linear_functional,
)
from .rng import substream
from .samplers import MwGConfig, run_chain, sample_stiefel_frame
from .targets import (
    BlockStructure,
    GaussianTarget,
    RidgeTarget,
    condition_numbers_gaussian,
    equicorrelated_precision,
    paired_precision,
    random_precision,
)
from .transport import (
    averaged_partial_entropy,
    averaged_partial_potential,
    entropy_along_path,
    kr_map_gaussian,
    pushforward_entropy,
)
from .gaussian import entropy_gaussian

Z_SCORE = 3.0
EXACT_TOL = 1e-9


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    """Outcome of one check of ``lhs <= rhs`` (or ``lhs == rhs`` when ``two_sided``).

    ``passed`` is decided at construction: ``lhs <= rhs + max(abs_tol, 3 se)``.
    """

    name: str
    lhs: float
    rhs: float
    standard_error: Optional[float] = None
    trials: int = 1
    seed: int = 0
    abs_tol: float = EXACT_TOL
    two_sided: bool = False
    extra: dict = field(default_factory=dict)
    require: bool = True
    passed: bool = field(init=False)

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        tol = self.abs_tol
        if self.standard_error is not None:
            tol = max(tol, Z_SCORE * self.standard_error)
        gap = abs(self.lhs - self.rhs) if self.two_sided else self.lhs - self.rhs
        self.passed = bool(gap <= tol and self.require)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def tolerance(self) -> float:
        se = self.standard_error
        return self.abs_tol if se is None else max(self.abs_tol, Z_SCORE * se)

    def row(self) -> list:
        se = "" if self.standard_error is None else repr(float(self.standard_error))
        return [self.name, repr(self.lhs), repr(self.rhs), repr(self.slack), se,
                str(self.trials), str(self.seed), "1" if self.passed else "0"]


@dataclass
class NonConvexReport:
    """KL trajectory of a chain on a non-strongly log-concave target against ``2 M B/(n + 2M)``."""

    R_squared: float
    kl_trajectory: list
    bound_trajectory: list
    warm_constant: float
    checkpoints: list
    n_blocks: int
    tolerance: float
    n_samples: int
    seed: int
    name: str = "nonconvex"

    def __post_init__(self):
        b = np.asarray(self.bound_trajectory)
        if np.any(np.diff(b) >= 0):
            raise ConfigError("bound trajectory must be strictly decreasing")

    @property
    def initial_ok(self) -> bool:
        return self.kl_trajectory[0] <= math.log(self.warm_constant) + self.tolerance

    @property
    def passed(self) -> bool:
        kl = np.asarray(self.kl_trajectory)
        return bool(np.all(kl <= np.asarray(self.bound_trajectory) + self.tolerance) and self.initial_ok)

    def reports(self) -> list:
        out = [InequalityReport(f"{self.name}[n=0,logC]", self.kl_trajectory[0],
                                math.log(self.warm_constant), abs_tol=self.tolerance,
                                trials=self.n_samples, seed=self.seed)]
        for n, kl, b in zip(self.checkpoints, self.kl_trajectory, self.bound_trajectory):
            out.append(InequalityReport(f"{self.name}[n={n}]", kl, b, abs_tol=self.tolerance,
                                        trials=self.n_samples, seed=self.seed))
        return out


CSV_HEADER = ["name", "lhs", "rhs", "slack", "se", "trials", "seed", "passed"]


def write_reports(reports: Sequence[InequalityReport], out) -> None:
    """One CSV row per report; ``out`` is a path, ``'-'`` (stdout) or a text stream."""
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.row())

    if out == "-":
        _write(sys.stdout)
    elif hasattr(out, "write"):
        _write(out)
    else:
        with open(out, "w", newline="") as fh:
            _write(fh)


def reports_csv_string(reports) -> str:
    buf = io.StringIO()
    write_reports(reports, buf)
    return buf.getvalue()


def summarize(reports) -> str:
    n_ok = sum(r.passed for r in reports)
    lines = [f"{n_ok}/{len(reports)} checks passed"]
    worst = sorted(reports, key=lambda r: r.slack)[:3]
    for r in worst:
        lines.append(f"  tightest: {r.name} lhs={r.lhs:.6g} rhs={r.rhs:.6g} slack={r.slack:.3g}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# random problem generators
# ---------------------------------------------------------------------------


def _require_strong(cn):
    if not math.isfinite(cn.kappa_star):
        raise UnsupportedError("the check needs a strongly log-concave target (finite kappa*)")


def gaussian_with_kappa_star(rng, d: int, kappa_star: float) -> GaussianTarget:
    """Random-scale equicorrelated Gaussian whose coordinate-wise condition number is ``kappa_star``."""
    if kappa_star < 1:
        raise ConfigError("kappa* is at least 1")
    rho = 1.0 - 1.0 / kappa_star
    C = equicorrelated_precision(d, rho)
    s = np.exp(rng.uniform(-1.0, 1.0, size=d)) * rng.choice([-1.0, 1.0], size=d)
    return GaussianTarget(rng.standard_normal(d), s[:, None] * C * s[None, :])


def random_gaussian_pair(rng, d: int):
    target = GaussianTarget(rng.standard_normal(d), random_precision(rng, d))
    return random_law(rng, d, spread=1.5), target


# ---------------------------------------------------------------------------
# closed-form Gaussian checks
# ---------------------------------------------------------------------------


def check_functional_inequality(mu, pi: GaussianTarget, seed: int = 0,
                                name: str = "functional") -> InequalityReport:
    """``(1/M) sum_m KL(mu_{-m}|pi_{-m}) <= (1 - 1/(kappa* M)) KL(mu|pi)`` in closed form."""
    cn = pi.condition_numbers
    _require_strong(cn)
    law = pi.law()
    M = pi.blocks.n_blocks
    kl = kl_gaussian(mu, law)
    if M == 1:
        lhs = 0.0
    else:
        lhs = float(np.mean([kl_gaussian(marginal_drop_block(mu, m, pi.blocks),
                                         marginal_drop_block(law, m, pi.blocks)) for m in range(M)]))
    rhs = (1.0 - 1.0 / (cn.kappa_star * M)) * kl
    return InequalityReport(name, lhs, rhs, seed=seed,
                            extra={"kl": kl, "kappa_star": cn.kappa_star, "M": M})


def check_contraction_one_step(mu, pi: GaussianTarget, n_mc: int = 10**6, seed: int = 0,
                               name: str = "one-step") -> InequalityReport:
    """Monte Carlo ``KL(mu P|pi)`` for the Gibbs update against ``(1 - 1/(kappa* M)) KL(mu|pi)``.

    ``mu P`` is the equal-weight mixture of the block updates, so its density
    is exact and the estimator is an average of ``log(mixture/pi)``.
    """
    if n_mc < 10**4:
        raise ConfigError("n_mc must be at least 1e4")
    cn = pi.condition_numbers
    _require_strong(cn)
    rng = substream(seed, 0)
    mix = gs_one_step_law(mu, pi)
    x = mix.sample(rng, n_mc)
    vals = mix.logpdf(x) - pi.log_density(x)
    lhs = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_mc))
    kl = kl_gaussian(mu, pi.law())
    M = pi.blocks.n_blocks
    func = check_functional_inequality(mu, pi).lhs
    rhs = (1.0 - 1.0 / (cn.kappa_star * M)) * kl
    return InequalityReport(name, lhs, rhs, standard_error=se, trials=n_mc, seed=seed,
                            extra={"kl": kl, "functional_lhs": func})


def check_variance_inequality(Q, trials: int = 200, seed: int = 0,
                              name: str = "variance") -> InequalityReport:
    """``sum_m E Var(v^T X|X_{-m}) >= Var(v^T X)/(2 kappa*)`` over random ``v``.

    Reported as the worst ratio ``Var/(2 kappa* sum)`` against 1.
    """
    Q = np.asarray(Q, dtype=float)
    ks = condition_numbers_gaussian(Q).kappa_star
    rng = substream(seed, 0)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(Q.shape[0])
        total, var = conditional_variance_sum(Q, v)
        worst = max(worst, var / (2.0 * ks * total))
    return InequalityReport(name, worst, 1.0, trials=trials, seed=seed)


def factorized_start_kl(pi: GaussianTarget, name: str = "feasible-start") -> InequalityReport:
    """KL of the product of conditionals at the mode, ``prod_m N(x*_m, 1/Q_mm)``, against ``d kappa^2``."""
    if not pi.blocks.is_unit:
        raise UnsupportedError("the factorized start needs unit blocks")
    Q = pi.precision
    mu = product_law(pi.mean, 1.0 / np.diag(Q))
    lhs = kl_gaussian(mu, pi.law())
    kappa = pi.condition_numbers.kappa
    return InequalityReport(name, lhs, pi.dim * kappa**2)


def warm_start_kl(pi: GaussianTarget, name: str = "warm-start") -> InequalityReport:
    """``KL(N(x*, L^{-1} I)|pi) <= log C`` with the warm constant ``C = kappa^{d/2}``."""
    cn = pi.condition_numbers
    mu = GaussianLaw(pi.mean, np.eye(pi.dim) / cn.L)
    return InequalityReport(name, kl_gaussian(mu, pi.law()), 0.5 * pi.dim * math.log(cn.kappa))


# ---------------------------------------------------------------------------
# transport identities
# ---------------------------------------------------------------------------


def check_entropy_identity(mu, nu, blocks=None, name: str = "entropy-identity") -> InequalityReport:
    """``(1/M) sum_m H(T^m # mu) = (1 - 1/M) H(mu) + (1/M) H(T # mu)`` for the triangular map."""
    T = kr_map_gaussian(mu, nu)
    blocks = blocks or BlockStructure.unit(T.dim)
    M = blocks.n_blocks
    lhs = averaged_partial_entropy(T, mu, 1.0, blocks)
    rhs = (M - 1) / M * entropy_gaussian(mu) + pushforward_entropy(T, mu) / M
    return InequalityReport(name, lhs, rhs, two_sided=True)


def check_path_convexity(mu, nu, n_grid: int = 11, name: str = "path-convexity") -> InequalityReport:
    """Entropy along ``(1 - t) Id + t T`` is convex: second differences ``>= -1e-10``."""
    T = kr_map_gaussian(mu, nu)
    h = entropy_along_path(T, mu, np.linspace(0.0, 1.0, n_grid))
    second = h[2:] - 2 * h[1:-1] + h[:-2]
    return InequalityReport(name, -float(second.min()), 0.0, abs_tol=1e-10)


def check_partial_entropy_bound(mu, nu, t: float, blocks=None, name: str = "partial-entropy") -> InequalityReport:
    """``(1/M) sum_m H(T^m_t # mu) <= (1 - t/M) H(mu) + (t/M) H(T # mu)``."""
    T = kr_map_gaussian(mu, nu)
    blocks = blocks or BlockStructure.unit(T.dim)
    M = blocks.n_blocks
    lhs = averaged_partial_entropy(T, mu, t, blocks)
    rhs = (1 - t / M) * entropy_gaussian(mu) + t / M * pushforward_entropy(T, mu)
    return InequalityReport(name, lhs, rhs)


def check_potential_inequality(mu, pi: GaussianTarget, name: str = "potential") -> InequalityReport:
    """Partial maps at ``t = lambda*`` decrease the potential energy at the coordinate-wise rate."""
    cn = pi.condition_numbers
    _require_strong(cn)
    M = pi.blocks.n_blocks
    lhs = averaged_partial_potential(mu, pi, cn.lambda_star)
    r = 1.0 / (cn.kappa_star * M)
    rhs = (1 - r) * potential_energy_gaussian(mu, pi) + r * potential_energy_gaussian(pi.law(), pi)
    return InequalityReport(name, lhs, rhs)


# ---------------------------------------------------------------------------
# spectral gap
# ---------------------------------------------------------------------------


def check_gap(Q, chain_len: int = 10**5, seed: int = 0, replicas: int = 4,
              rel_tol: float = 0.1, backend=None, name: str = "gap") -> InequalityReport:
    """Compare the exact Gibbs spectral gap with ``1 - lag-1 autocorrelation`` of the slowest functional.

    Chains start at stationarity.  Also requires ``gap >= 1/(2 kappa* d)``.
    """
    if chain_len < 10**5:
        raise ConfigError("chain_len must be at least 1e5")
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    target = GaussianTarget(np.zeros(d), Q)
    analytic = amit_gap(Q)
    ks = target.condition_numbers.kappa_star
    a = slowest_linear_functional(Q)
    rng = substream(seed, 0)
    X = np.ascontiguousarray(target.sample(rng, replicas))
    _, trace, _ = kernels.gaussian_gibbs(target, X, rng, chain_len, functional=a, backend=backend)
    num = den = 0.0
    for f in trace:
        f = f - f.mean()
        num += float(np.dot(f[1:], f[:-1]))
        den += float(np.dot(f, f))
    empirical = 1.0 - num / den
    rel = abs(analytic - empirical) / analytic
    lower = 1.0 / (2.0 * ks * d)
    return InequalityReport(name, rel, rel_tol, abs_tol=0.0, trials=chain_len * replicas, seed=seed,
                            require=analytic >= lower,
                            extra={"analytic": analytic, "empirical": empirical, "lower": lower,
                                   "inverse_d_kappa_star": 1.0 / (d * ks)})


# ---------------------------------------------------------------------------
# Hit-and-Run
# ---------------------------------------------------------------------------


def check_hr_projection_inequality(mu, pi: GaussianTarget, ell: int, n_frames: int = 10**4,
                                   seed: int = 0, name: str = "hr-proj") -> InequalityReport:
    """Frame average of projected KLs against ``(1 - (d - ell)/(kappa d)) KL(mu|pi)``."""
    d = pi.dim
    if not 1 <= ell <= d:
        raise ConfigError("ell must lie in [1, d]")
    law = pi.law()
    rng = substream(seed, 0)
    vals = np.empty(n_frames)
    for k in range(n_frames):
        V = sample_stiefel_frame(d, ell, rng)
        vals[k] = kl_gaussian(projected_law(mu, V), projected_law(law, V))
    kl = kl_gaussian(mu, law)
    kappa = pi.condition_numbers.kappa
    rhs = (1.0 - (d - ell) / (kappa * d)) * kl
    se = float(np.std(vals, ddof=1) / math.sqrt(n_frames)) if n_frames > 1 else None
    return InequalityReport(f"{name}[ell={ell}]", float(np.mean(vals)), rhs, standard_error=se,
                            trials=n_frames, seed=seed, extra={"kl": kl})


def check_hr_contraction(mu, pi: GaussianTarget, ell: int, n_mc: int = 2 * 10**5, seed: int = 0,
                         frames_per_batch: int = 32, batches: int = 20,
                         name: str = "hr-contract") -> InequalityReport:
    """One Hit-and-Run step: MC ``KL(mu P|pi)`` against ``(1 - ell/(kappa d)) KL(mu|pi)``.

    The one-step law is replaced by a mixture over ``frames_per_batch``
    sampled frames; by convexity its expected KL is an upper bound, so the
    estimate is conservative.  The SE comes from independent batches (frames
    and points redrawn) and is doubled.
    """
    d = pi.dim
    if not 1 <= ell <= d:
        raise ConfigError("ell must lie in [1, d]")
    rng = substream(seed, 0)
    per = max(1, n_mc // batches)
    est = np.empty(batches)
    for b in range(batches):
        comps = [frame_update_law(mu, pi, sample_stiefel_frame(d, ell, rng)) for _ in range(frames_per_batch)]
        mix = GaussianMixture(np.full(frames_per_batch, 1.0 / frames_per_batch), comps)
        x = mix.sample(rng, per)
        est[b] = float(np.mean(mix.logpdf(x) - pi.log_density(x)))
    kl = kl_gaussian(mu, pi.law())
    rhs = (1.0 - ell / (pi.condition_numbers.kappa * d)) * kl
    se = 2.0 * float(np.std(est, ddof=1) / math.sqrt(batches))
    return InequalityReport(f"{name}[ell={ell}]", float(np.mean(est)), rhs, standard_error=se,
                            trials=per * batches, seed=seed, extra={"kl": kl})


# ---------------------------------------------------------------------------
# Metropolis-within-Gibbs
# ---------------------------------------------------------------------------


def _gauss_box(laws, width=8.0):
    lo = np.min([l.mean - width * np.sqrt(np.diag(l.covariance)) for l in laws], axis=0)
    hi = np.max([l.mean + width * np.sqrt(np.diag(l.covariance)) for l in laws], axis=0)
    return lo, hi


def _mh_block_update(p, lpi, mode, var, g, h):
    """Apply one independence-MH update along the last axis of the grid density ``p``.

    ``lpi`` is the (unnormalised) log target on the same grid, ``mode`` and
    ``var`` the proposal per row.
    """
    out = np.empty_like(p)
    for j in range(p.shape[0]):
        lq = -0.5 * (g - mode[j]) ** 2 / var - 0.5 * math.log(2 * math.pi * var)
        lw = lpi[j] - lq  # log importance weight
        la = np.minimum(0.0, lw[None, :] - lw[:, None])  # [from, to]
        K = np.exp(lq[None, :] + la) * h
        rej = 1.0 - K.sum(axis=1)
        out[j] = p[j] @ K + p[j] * rej
    return out


def _mwg_grid_kl(mu: GaussianLaw, pi: GaussianTarget, cfg: MwGConfig, n: int):
    lo, hi = _gauss_box([mu, pi.law()])
    g0 = np.linspace(lo[0], hi[0], n)
    g1 = np.linspace(lo[1], hi[1], n)
    h0, h1 = g0[1] - g0[0], g1[1] - g1[0]
    X0, X1 = np.meshgrid(g0, g1, indexing="ij")
    pts = np.column_stack([X0.ravel(), X1.ravel()])
    p = np.exp(mu.logpdf(pts)).reshape(n, n)
    lpi = pi.log_density(pts).reshape(n, n)
    Q, m = pi.precision, pi.mean
    mode0 = m[0] - Q[0, 1] * (g1 - m[1]) / Q[0, 0]  # conditional mode of x0 per x1
    mode1 = m[1] - Q[1, 0] * (g0 - m[0]) / Q[1, 1]
    out0 = _mh_block_update(p.T, lpi.T, mode0, cfg.step_scales[0], g0, h0).T
    out1 = _mh_block_update(p, lpi, mode1, cfg.step_scales[1], g1, h1)
    out = 0.5 * (out0 + out1)
    out /= out.sum() * h0 * h1
    lpin = lpi - special.logsumexp(lpi) - math.log(h0 * h1)
    mask = out > 0
    return float(np.sum(out[mask] * (np.log(out[mask]) - lpin[mask])) * h0 * h1)


def minorization_ratio(pi: GaussianTarget, cfg: MwGConfig, n: int = 401) -> float:
    """Largest ``pi(y|x_{-m}) / q(y)`` over a grid, for the independence proposals of ``cfg``."""
    law = pi.law()
    lo, hi = _gauss_box([law])
    Q = pi.precision
    worst = 0.0
    for m in range(pi.dim):
        g = np.linspace(lo[m], hi[m], n)
        cvar = 1.0 / Q[m, m]
        # the ratio depends on y - mode only; the conditional mode shifts with x_{-m}
        c = law.mean[m]
        for shift in np.linspace(-4.0, 4.0, 9) * math.sqrt(law.covariance[m, m]):
            mode = c + shift
            lp = -0.5 * (g - mode) ** 2 / cvar - 0.5 * math.log(2 * math.pi * cvar)
            s = cfg.step_scales[m]
            lq = -0.5 * (g - mode) ** 2 / s - 0.5 * math.log(2 * math.pi * s)
            worst = max(worst, float(np.exp(lp - lq).max()))
    return worst


def check_mwg_contraction(pi: GaussianTarget, cfg: Optional[MwGConfig] = None, mu=None,
                          n_grid: int = 201, seed: int = 0, name: str = "mwg") -> InequalityReport:
    """Independence-MH within Gibbs: one-step KL against ``(1 - beta/(kappa* M)) KL(mu|pi)``.

    The one-step law is computed by quadrature on a grid (``d = 2``), at
    resolutions ``n_grid`` and ``2 n_grid - 1``; their difference serves as
    the error estimate.  The minorization premise ``pi(.|x_{-m})/q <=
    sqrt(kappa*)`` is checked on a grid and must hold for the report to pass.
    """
    cn = pi.condition_numbers
    _require_strong(cn)
    if pi.dim != 2 or not pi.blocks.is_unit:
        raise UnsupportedError("grid quadrature of the MwG step needs d = 2 with unit blocks")
    cfg = cfg or MwGConfig.default("imh", cn, pi.blocks)
    if cfg.proposal_kind == "rwm":
        raise UnsupportedError("random-walk proposals admit no KL contraction; use the gap route")
    if cfg.proposal_kind == "exact":
        return check_contraction_one_step(mu or _default_start(pi, seed), pi, seed=seed, name=name)
    mu = mu or _default_start(pi, seed)
    beta = cfg.beta_hint if cfg.beta_hint is not None else 1.0 / math.sqrt(cn.kappa_star)
    ratio = minorization_ratio(pi, cfg)
    coarse = _mwg_grid_kl(mu, pi, cfg, n_grid)
    fine = _mwg_grid_kl(mu, pi, cfg, 2 * n_grid - 1)
    kl = kl_gaussian(mu, pi.law())
    rhs = (1.0 - beta / (cn.kappa_star * pi.blocks.n_blocks)) * kl
    bound = math.sqrt(cn.kappa_star) * (1 + 1e-9)
    return InequalityReport(name, fine, rhs, standard_error=abs(fine - coarse), seed=seed,
                            require=ratio <= bound,
                            extra={"minorization_ratio": ratio, "beta": beta, "kl": kl,
                                   "factor": fine / kl if kl > 0 else 0.0})


def _default_start(pi: GaussianTarget, seed: int) -> GaussianLaw:
    return random_law(substream(seed, 1), pi.dim, spread=1.0)


def check_stationarity(pi: GaussianTarget, kernel: str = "mwg-rwm", steps: int = 10**4,
                       seed: int = 0, batches: int = 20, z: float = 4.0,
                       name: str = "stationarity") -> InequalityReport:
    """First and second moments of a chain started at ``pi`` stay within ``z`` batch-means SEs.

    Reported as the largest absolute z-score against ``z``.
    """
    rng = substream(seed, 0)
    x0 = pi.sample(rng, 1)[0]
    rec = run_chain(pi, kernel, x0, steps, rng)
    S = rec.states
    d = pi.dim
    cov = pi.covariance
    mean = pi.mean
    iu = np.triu_indices(d)
    feats = np.hstack([S, (S[:, :, None] * S[:, None, :])[:, iu[0], iu[1]]])
    truth = np.concatenate([mean, (cov + np.outer(mean, mean))[iu]])
    B = feats[: steps - steps % batches].reshape(batches, -1, feats.shape[1]).mean(axis=1)
    se = B.std(axis=0, ddof=1) / math.sqrt(batches)
    zs = np.abs(B.mean(axis=0) - truth) / se
    acc = [a for a in rec.accepted if a is not None]
    rate = float(np.mean(acc)) if acc else 1.0
    return InequalityReport(f"{name}[{kernel}]", float(zs.max()), z, abs_tol=0.0, trials=steps,
                            seed=seed, require=rate > 0.0, extra={"acceptance": rate})


# ---------------------------------------------------------------------------
# non-strongly log-concave targets
# ---------------------------------------------------------------------------


@dataclass
class WarmStart:
    """Initial law ``mu0`` with ``mu0 <= C pi``, given by a sampler ``(rng, n) -> (n, d)``."""

    sampler: Callable
    C: float


def _ridge_exact(target: RidgeTarget):
    if (target.link != "logcosh" or np.any(target.c != 0) or np.any(target.labels != 0)
            or target.A.shape[0] != target.A.shape[1]):
        raise UnsupportedError("exact sampling is available for square log-cosh ridge targets only")
    return np.linalg.inv(target.A)


def exact_sampler(target) -> Callable:
    """``(rng, n) -> draws from pi`` for Gaussians and square log-cosh ridge targets."""
    if isinstance(target, GaussianTarget):
        return target.sample
    Ainv = _ridge_exact(target)

    def draw(rng, n):
        # A x has iid coordinates with density 1/(pi cosh z)
        z = np.log(np.tan(0.5 * math.pi * rng.random((n, target.dim))))
        return z @ Ainv.T

    return draw


def reference_moments(target):
    """``(mean, covariance, mode)`` of ``pi`` for the targets :func:`exact_sampler` supports."""
    if isinstance(target, GaussianTarget):
        return target.mean, target.covariance, target.mean
    Ainv = _ridge_exact(target)
    zero = np.zeros(target.dim)
    return zero, (math.pi**2 / 4.0) * Ainv @ Ainv.T, zero


def half_space_warm_start(target) -> WarmStart:
    """``pi`` restricted to ``{x_1 >= x*_1}``: ``C = 2`` for targets symmetric about the mode."""
    draw = exact_sampler(target)
    _, _, mode = reference_moments(target)

    def sampler(rng, n):
        x = draw(rng, n)
        flip = x[:, 0] < mode[0]
        x[flip] = 2 * mode - x[flip]
        return x

    return WarmStart(sampler, 2.0)


def _unnormalized_log_density(target, pts):
    if isinstance(target, GaussianTarget):
        return target.log_density(pts)
    z = pts @ target.A.T
    phi = target._phi(z).sum(axis=1) - z @ target.labels
    return -(0.5 * np.einsum("ij,j,ij->i", pts, target.c, pts) + phi)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _bin_masses(target, edges):
    """Probability of every histogram bin under ``pi`` (Gauss-Legendre per bin, normalised on the box)."""
    nodes, weights = [], []
    for e in edges:
        c = 0.5 * (e[1:] + e[:-1])
        hw = 0.5 * (e[1:] - e[:-1])
        nodes.append((c[:, None] + hw[:, None] * _GL_NODES[None, :]).ravel())
        weights.append((hw[:, None] * _GL_WEIGHTS[None, :]).ravel())
    k = _GL_NODES.size
    if len(edges) == 1:
        ld = _unnormalized_log_density(target, nodes[0][:, None])
        w = np.exp(ld - ld.max()) * weights[0]
        mass = w.reshape(-1, k).sum(axis=1)
    else:
        G0, G1 = np.meshgrid(nodes[0], nodes[1], indexing="ij")
        ld = _unnormalized_log_density(target, np.column_stack([G0.ravel(), G1.ravel()]))
        w = np.exp(ld - ld.max()).reshape(G0.shape) * weights[0][:, None] * weights[1][None, :]
        n0, n1 = edges[0].size - 1, edges[1].size - 1
        mass = w.reshape(n0, k, n1, k).sum(axis=(1, 3))
    return mass / mass.sum()


def histogram_kl(samples, target, edges, ref_mass=None, leak_tol: float = 1e-3) -> float:
    """Plug-in KL of the binned empirical law against the binned target (``1e-12`` smoothing)."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 1 and samples.shape[1] > 1 and len(edges) == 1:
        samples = samples.T
    ref = _bin_masses(target, edges) if ref_mass is None else ref_mass
    counts, _ = np.histogramdd(samples, bins=edges)
    inside = counts.sum()
    leak = 1.0 - inside / samples.shape[0]
    if leak > leak_tol:
        raise DomainError(f"{leak:.3g} of the samples fall outside the histogram box")
    p = counts / inside
    mask = p > 0
    return float(np.sum(p[mask] * np.log((p[mask] + 1e-12) / (ref[mask] + 1e-12))))


def check_nonconvex_rate(pi, warm: Optional[WarmStart] = None, n_steps: int = 200,
                         n_samples: int = 10**6, seed: int = 0, bins: int = 256,
                         tol: float = 0.05, checkpoints=None, backend=None,
                         name: str = "nonconvex") -> NonConvexReport:
    """Histogram-KL trajectory of random-scan Gibbs from a warm start against ``2 M B/(n + 2M)``.

    ``B = max(log C, 2 C int ||x - x*||_L^2 dpi)`` bounds the constant of the
    sublinear rate for warm starts.  Dimension 1 or 2 only.
    """
    d = pi.dim
    if d > 2:
        raise UnsupportedError("histogram KL is limited to d <= 2")
    warm = warm or half_space_warm_start(pi)
    M = pi.blocks.n_blocks
    mean, cov, mode = reference_moments(pi)
    if isinstance(pi, GaussianTarget):
        block_L = np.asarray(pi.condition_numbers.block_L, dtype=float)
    else:
        block_L = np.asarray(pi.block_L, dtype=float)
    second = np.diag(cov) + (mean - mode) ** 2
    B = max(math.log(warm.C), 2.0 * warm.C * float(np.dot(block_L, second)))
    if checkpoints is None:
        cps = [0]
        n = M
        while n < n_steps:
            cps.append(n)
            n *= 2
        cps.append(n_steps)
        checkpoints = sorted(set(cps))
    checkpoints = [int(c) for c in checkpoints]
    sd = np.sqrt(np.diag(cov))
    edges = [np.linspace(mean[i] - 8 * sd[i], mean[i] + 8 * sd[i], bins + 1) for i in range(d)]
    ref = _bin_masses(pi, edges)
    rng = substream(seed, 0)
    X = np.ascontiguousarray(warm.sampler(rng, n_samples), dtype=float)
    run = kernels.gaussian_gibbs if isinstance(pi, GaussianTarget) else kernels.ridge_gibbs
    snaps, _, _ = run(pi, X, rng, max(checkpoints), checkpoints=checkpoints, backend=backend)
    kl = [histogram_kl(snaps[:, k, :], pi, edges, ref) for k in range(len(checkpoints))]
    bound = [2.0 * M * B / (n + 2.0 * M) for n in checkpoints]
    return NonConvexReport(B, kl, bound, warm.C, checkpoints, M, tol, n_samples, seed, name)


# ---------------------------------------------------------------------------
# mixing times
# ---------------------------------------------------------------------------


@dataclass
class MixingResult:
    """First iteration at which the estimated KL (plus ``z`` SE) drops to ``eps``, against the bound."""

    dim: int
    iterations: float
    bound: float
    kl_curve: np.ndarray
    se_curve: np.ndarray
    eps: float
    start: str
    metric: str

    @property
    def ratio(self) -> float:
        return self.iterations / self.bound

    @property
    def passed(self) -> bool:
        return bool(self.ratio <= 1.0)

    def report(self, seed: int = 0, name: str = "mixing") -> InequalityReport:
        return InequalityReport(f"{name}[d={self.dim}]", self.iterations, self.bound, abs_tol=0.0,
                                trials=self.kl_curve.size, seed=seed)


def mixing_bound(cn, M: int, d: int, eps: float, start: str, C: float = None) -> float:
    """Iteration bound for KL mixing from a warm or factorized start."""
    if start == "factorized":
        return cn.kappa_star * M * (math.log(1.0 / eps) + math.log(d) + 2.0 * math.log(cn.kappa))
    if start == "warm":
        loglog = math.log(math.log(C)) if C > math.e ** 1e-300 and math.log(C) > 0 else -math.inf
        return cn.kappa_star * M * max(0.0, math.log(1.0 / eps) + loglog)
    raise ConfigError(f"unknown start {start!r}")


def mixing_experiment(pi: GaussianTarget, kernel: str = "gs", eps: float = 0.01, metric: str = "kl",
                      start: str = "factorized", replicas: int = 64, seed: int = 0,
                      max_steps: Optional[int] = None, backend=None) -> MixingResult:
    """Measure KL mixing of random-scan Gibbs on a Gaussian target.

    The KL is the average over ``replicas`` random update sequences of the
    exact KL of the sequence-conditional law.  By convexity this average is
    an upper bound on the KL of the chain, so the measured mixing time is
    itself conservative.  ``metric='tv'`` converts through Pinsker
    (``TV <= sqrt(KL/2)``).
    """
    if not isinstance(pi, GaussianTarget):
        raise UnsupportedError("mixing experiments need a Gaussian target")
    if kernel != "gs":
        raise UnsupportedError("only the single-site Gibbs kernel has a mixing bound here")
    metric = metric.lower()
    if metric not in ("kl", "tv"):
        raise ConfigError("metric must be 'kl' or 'tv'")
    cn = pi.condition_numbers
    _require_strong(cn)
    d, M = pi.dim, pi.blocks.n_blocks
    if start == "factorized":
        law0 = product_law(pi.mean, 1.0 / np.diag(pi.precision))
        C = None
    elif start == "warm":
        law0 = GaussianLaw(pi.mean, np.eye(d) / cn.L)
        C = cn.kappa ** (d / 2.0)
    else:
        raise ConfigError(f"unknown start {start!r}")
    eps_kl = eps if metric == "kl" else 2.0 * eps * eps
    bound = mixing_bound(cn, M, d, eps_kl, start, C)
    steps = int(max_steps or math.ceil(2 * bound) + 1)
    rng = substream(seed, 0)
    kl = kernels.sequence_kl(law0, pi, rng, replicas, steps, backend=backend)
    mean = kl.mean(axis=0)
    se = kl.std(axis=0, ddof=1) / math.sqrt(replicas)
    hit = np.nonzero(mean + Z_SCORE * se <= eps_kl)[0]
    iters = float(hit[0]) if hit.size else math.inf
    return MixingResult(d, iters, bound, mean, se, eps, start, metric)


FAMILIES = {"pairs": paired_precision, "equicorrelated": equicorrelated_precision}


def mixing_scaling(dims=(2, 4, 8, 16), rho: float = 0.75, eps: float = 0.01,
                   replicas: int = 4096, seed: int = 0, family: str = "pairs", backend=None):
    """Mixing on a family of targets of growing dimension at fixed ``kappa*``.

    ``family='pairs'`` keeps both ``kappa*`` and ``kappa`` fixed;
    ``'equicorrelated'`` keeps ``kappa*`` fixed while ``kappa`` grows like ``d``.
    Returns ``(results, slope)`` with the slope of a log-log fit of
    iterations on ``d``.
    """
    try:
        make = FAMILIES[family]
    except KeyError:
        raise ConfigError(f"unknown family {family!r}") from None
    res = []
    for k, d in enumerate(dims):
        pi = GaussianTarget(np.zeros(d), make(d, rho))
        res.append(mixing_experiment(pi, eps=eps, replicas=replicas, seed=seed + k, backend=backend))
    x = np.log(np.asarray(dims, dtype=float))
    y = np.log([r.iterations for r in res])
    slope = float(np.polyfit(x, y, 1)[0])
    return res, slope


# ---------------------------------------------------------------------------
# nearest-neighbour KL
# ---------------------------------------------------------------------------


def estimate_kl_knn(samples_p, samples_q, k: int = 5, seed: int = 0):
    """k-nearest-neighbour estimate of ``KL(p|q)`` from samples of each.

    Returns ``(estimate, note)``.  The estimator is consistent but biased at
    finite sample sizes, more so in higher dimension; use it only with
    generous tolerances.
    """
    P = np.asarray(samples_p, dtype=float)
    Qs = np.asarray(samples_q, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if Qs.ndim == 1:
        Qs = Qs[:, None]
    n, d = P.shape
    m = Qs.shape[0]
    if n < 1000 or m < 1000:
        raise ConfigError("need at least 1e3 samples from each law")
    note = f"k={k} nearest-neighbour estimate; finite-sample bias grows with dimension"
    rng = substream(seed, 0)
    if np.unique(P, axis=0).shape[0] < n or np.unique(Qs, axis=0).shape[0] < m:
        scale = 1e-12 * max(1.0, float(np.abs(np.concatenate([P, Qs])).max()))
        P = P + scale * rng.standard_normal(P.shape)
        Qs = Qs + scale * rng.standard_normal(Qs.shape)
        note += "; duplicates jittered"
    rho = cKDTree(P).query(P, k=k + 1)[0][:, k]
    nu = cKDTree(Qs).query(P, k=k + 1)[0]
    # a point present in both sets must not count as its own neighbour
    shared = nu[:, 0] == 0.0
    if np.any(shared):
        note += f"; {int(shared.sum())} shared samples left out of their own neighbour search"
    nu = np.where(shared, nu[:, k], nu[:, k - 1])
    est = d * float(np.mean(np.log(nu / rho))) + math.log(m / (n - 1.0))
    return est, note


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def _dim(rng, dim, lo=2, hi=10):
    return int(dim) if dim else int(rng.integers(lo, hi + 1))


def suite_functional(dim=None, trials=100, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        mu, pi = random_gaussian_pair(rng, _dim(rng, dim))
        out.append(check_functional_inequality(mu, pi, seed=seed, name=f"functional[{t}]"))
    return out


def suite_one_step(dim=None, trials=1, seed=0, rho=None, n_mc=10**6, **_):
    out = []
    ks = 4.0 if rho is None else 1.0 / (1.0 - rho)
    for t in range(trials):
        rng = substream(seed, t)
        d = int(dim) if dim else 3
        pi = gaussian_with_kappa_star(rng, d, ks)
        mu = random_law(rng, d)
        out.append(check_contraction_one_step(mu, pi, n_mc=n_mc, seed=seed + t, name=f"one-step[{t}]"))
    return out


def suite_gap(dim=None, trials=1, seed=0, rho=None, chain_len=10**5, **_):
    d = int(dim) if dim else 2
    rho = 0.5 if rho is None else rho
    Q = equicorrelated_precision(d, rho)
    out = [check_gap(Q, chain_len=chain_len, seed=seed, name=f"gap[d={d},rho={rho}]")]
    for t in range(trials if trials > 1 else 0):
        rng = substream(seed, t + 1)
        Qr = random_precision(rng, _dim(rng, dim))
        ks = condition_numbers_gaussian(Qr).kappa_star
        out.append(InequalityReport(f"gap-formula[{t}]", amit_gap(Qr), 1.0 / (Qr.shape[0] * ks),
                                    abs_tol=1e-10, two_sided=True, seed=seed))
    return out


def suite_variance(dim=None, trials=200, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        Q = random_precision(rng, _dim(rng, dim))
        out.append(check_variance_inequality(Q, trials=1, seed=seed + t, name=f"variance[{t}]"))
    return out


def suite_hr_proj(dim=None, trials=1, seed=0, n_frames=10**4, **_):
    d = int(dim) if dim else 4
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        mu, pi = random_gaussian_pair(rng, d)
        for ell in range(1, d + 1):
            out.append(check_hr_projection_inequality(mu, pi, ell, n_frames=n_frames, seed=seed + t,
                                                      name=f"hr-proj[{t}]"))
    return out


def suite_hr_contract(dim=None, trials=1, seed=0, n_mc=2 * 10**5, **_):
    d = int(dim) if dim else 3
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        mu, pi = random_gaussian_pair(rng, d)
        for ell in range(1, d + 1):
            out.append(check_hr_contraction(mu, pi, ell, n_mc=n_mc, seed=seed + t,
                                            name=f"hr-contract[{t}]"))
    return out


def suite_mwg(dim=None, trials=1, seed=0, rho=None, **_):
    out = []
    kstars = (2.0, 10.0) if rho is None else (1.0 / (1.0 - rho),)
    for t in range(trials):
        for ks in kstars:
            rng = substream(seed, t)
            pi = gaussian_with_kappa_star(rng, 2, ks)
            out.append(check_mwg_contraction(pi, seed=seed + t, name=f"mwg[{t},kappa*={ks:g}]"))
        rng = substream(seed, 1000 + t)
        pi = gaussian_with_kappa_star(rng, int(dim) if dim else 2, kstars[-1])
        out.append(check_stationarity(pi, "mwg-rwm", seed=seed + t, name=f"stationarity[{t}]"))
    return out


def suite_nonconvex(dim=None, trials=1, seed=0, n_samples=10**6, n_steps=200, **_):
    from .targets import logcosh_target_1d

    d = int(dim) if dim else 1
    if d == 1:
        pi = logcosh_target_1d()
    else:
        pi = RidgeTarget([[1.0, 0.0], [0.8, 0.6]], link="logcosh")
    rep = check_nonconvex_rate(pi, n_steps=n_steps, n_samples=n_samples, seed=seed,
                               name=f"nonconvex[d={d}]")
    return rep.reports()


def suite_feasible_start(dim=None, trials=100, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        d = _dim(rng, dim)
        pi = GaussianTarget(rng.standard_normal(d), random_precision(rng, d))
        out.append(factorized_start_kl(pi, name=f"feasible-start[{t}]"))
        out.append(warm_start_kl(pi, name=f"warm-start[{t}]"))
    return out


def suite_entropy_identity(dim=None, trials=100, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        d = _dim(rng, dim)
        mu, nu = random_law(rng, d), random_law(rng, d, spread=2.0)
        out.append(check_entropy_identity(mu, nu, name=f"entropy-identity[{t}]"))
    return out


def suite_path_convexity(dim=None, trials=100, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        d = _dim(rng, dim)
        mu, nu = random_law(rng, d), random_law(rng, d, spread=2.0)
        out.append(check_path_convexity(mu, nu, name=f"path-convexity[{t}]"))
        out.append(check_partial_entropy_bound(mu, nu, float(rng.uniform()), name=f"partial-entropy[{t}]"))
    return out


def suite_potential(dim=None, trials=100, seed=0, **_):
    out = []
    for t in range(trials):
        rng = substream(seed, t)
        mu, pi = random_gaussian_pair(rng, _dim(rng, dim))
        out.append(check_potential_inequality(mu, pi, name=f"potential[{t}]"))
    return out


def suite_mixing(dim=None, trials=1, seed=0, rho=None, replicas=4096, family="pairs", **_):
    rho = 0.75 if rho is None else rho
    dims = (int(dim),) if dim else (2, 4, 8, 16)
    res, slope = mixing_scaling(dims, rho=rho, replicas=replicas, seed=seed, family=family)
    out = [r.report(seed=seed) for r in res]
    if len(dims) > 1:
        out.append(InequalityReport("mixing-slope[low]", 0.8, slope, abs_tol=0.0, seed=seed))
        out.append(InequalityReport("mixing-slope[high]", slope, 1.3, abs_tol=0.0, seed=seed))
    return out


SUITES = {
    "t31": suite_functional,
    "t32": suite_one_step,
    "gap": suite_gap,
    "variance": suite_variance,
    "hr-proj": suite_hr_proj,
    "hr-contract": suite_hr_contract,
    "mwg": suite_mwg,
    "nonconvex": suite_nonconvex,
    "feasible-start": suite_feasible_start,
    "lemma54": suite_entropy_identity,
    "lemma56": suite_path_convexity,
    "potential": suite_potential,
    "mixing": suite_mixing,
}


def run_suite(name: str, **kwargs) -> list:
    try:
        fn = SUITES[name]
    except KeyError:
        raise ConfigError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)}") from None
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return fn(**kwargs)
