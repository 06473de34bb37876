"""Adaptive rejection sampling for one-dimensional log-concave densities.

The envelope is the derivative-free secant hull: on ``[x_i, x_{i+1}]`` the
log-density lies below the extensions of the neighbouring chords, and beyond
the outermost abscissae below the extension of the outermost chord.  Chords
between consecutive abscissae give the lower squeeze.  Every density
evaluation made during rejection is added to the envelope.

The arithmetic is scalar (``math``) on purpose: the compiled kernels repeat
it operation for operation so both paths consume the random stream in the
same order (piece uniform, position uniform, acceptance uniform).
"""

from __future__ import annotations

import bisect
import math
from typing import Callable, Optional

import numpy as np

from .errors import BracketError, ConditionalSamplingError, HullViolationError

HULL_TOL = 1e-8
MODE_TOL = 1e-8
MAX_EXPANSIONS = 60
MAX_PROPOSALS = 10_000


def _fd_slope(h, x):
    delta = 1e-6 * max(1.0, abs(x))
    return (h(x + delta) - h(x - delta)) / (2.0 * delta)


def _piece_log_mass(lo, hi, ref, vref, s):
    if lo == -math.inf:
        return vref - math.log(s)
    if hi == math.inf:
        return vref - math.log(-s)
    w = hi - lo
    t = s * w
    if t > 0.0:
        return vref + t + math.log(-math.expm1(-t)) - math.log(s)
    if t < 0.0:
        return vref + math.log(-math.expm1(t)) - math.log(-s)
    return vref + math.log(w)


class Envelope:
    """Secant upper hull and chord squeeze through sorted abscissae."""

    def __init__(self, abscissae, values):
        xs = [float(v) for v in abscissae]
        hs = [float(v) for v in values]
        if len(xs) < 3 or len(xs) != len(hs):
            raise ValueError("an envelope needs at least three abscissae with values")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("abscissae must be strictly increasing")
        if not all(math.isfinite(v) for v in hs):
            raise ValueError("log-density values at the abscissae must be finite")
        self._xs, self._hs = xs, hs
        self._build()

    # construction ---------------------------------------------------------

    def _build(self):
        xs, hs = self._xs, self._hs
        k = len(xs)
        c = [(hs[j + 1] - hs[j]) / (xs[j + 1] - xs[j]) for j in range(k - 1)]
        for j in range(1, k - 1):
            if c[j] > c[j - 1] + HULL_TOL * max(1.0, abs(c[j - 1])):
                raise HullViolationError(
                    f"chord slopes increase near x={xs[j]:.6g}: density is not log-concave"
                )
        if not (c[0] > 0.0 and c[-1] < 0.0):
            raise BracketError("outermost abscissae do not bracket the mode")
        pieces = [(-math.inf, xs[0], xs[0], hs[0], c[0])]
        for i in range(k - 1):
            a, b = xs[i], xs[i + 1]
            has_l, has_r = i >= 1, i + 1 <= k - 2
            if has_l and has_r:
                cl, cr = c[i - 1], c[i + 1]
                if cl > cr:
                    z = (hs[i + 1] - hs[i] - cr * b + cl * a) / (cl - cr)
                    z = min(max(z, a), b)
                else:
                    z = b
                if z > a:
                    pieces.append((a, z, a, hs[i], cl))
                if z < b:
                    pieces.append((z, b, z, hs[i + 1] + cr * (z - b), cr))
            elif has_l:
                pieces.append((a, b, a, hs[i], c[i - 1]))
            else:
                pieces.append((a, b, a, hs[i + 1] + c[i + 1] * (a - b), c[i + 1]))
        pieces.append((xs[-1], math.inf, xs[-1], hs[-1], c[-1]))
        self._pieces = pieces
        self._bounds = [p[1] for p in pieces[:-1]]
        lm = [_piece_log_mass(*p) for p in pieces]
        top = max(lm)
        w = [math.exp(v - top) for v in lm]
        total = 0.0
        for v in w:
            total += v
        self._log_mass = top + math.log(total)
        cum, acc = [], 0.0
        for v in w:
            acc += v / total
            cum.append(acc)
        cum[-1] = 1.0
        self._cum = cum
        self._masses = [v / total for v in w]

    # inspection -----------------------------------------------------------

    @property
    def abscissae(self) -> np.ndarray:
        return np.array(self._xs)

    @property
    def values(self) -> np.ndarray:
        return np.array(self._hs)

    @property
    def hull_segments(self) -> list:
        """``(lo, hi, slope, intercept)`` of each linear piece of the upper hull."""
        return [(lo, hi, s, vref - s * ref) for lo, hi, ref, vref, s in self._pieces]

    @property
    def segment_masses(self) -> np.ndarray:
        return np.array(self._masses)

    @property
    def log_mass(self) -> float:
        """Log of the integral of ``exp(hull)``."""
        return self._log_mass

    def __len__(self):
        return len(self._xs)

    def _piece_index(self, x):
        return bisect.bisect_left(self._bounds, x)

    def hull(self, x: float) -> float:
        lo, hi, ref, vref, s = self._pieces[self._piece_index(x)]
        return vref + s * (x - ref)

    def squeeze(self, x: float) -> float:
        xs, hs = self._xs, self._hs
        if x < xs[0] or x > xs[-1]:
            return -math.inf
        i = min(bisect.bisect_right(xs, x) - 1, len(xs) - 2)
        t = (x - xs[i]) / (xs[i + 1] - xs[i])
        return hs[i] + t * (hs[i + 1] - hs[i])

    # sampling -------------------------------------------------------------

    def propose(self, u_piece: float, u_pos: float) -> tuple:
        """Map two uniforms to ``(x, hull(x))`` by inverting the hull CDF."""
        j = bisect.bisect_right(self._cum, u_piece)
        j = min(j, len(self._pieces) - 1)
        lo, hi, ref, vref, s = self._pieces[j]
        if lo == -math.inf:
            x = hi + math.log1p(-u_pos) / s
        elif hi == math.inf:
            x = lo + math.log1p(-u_pos) / s
        else:
            t = s * (hi - lo)
            if t > 0.0:
                x = hi + math.log((1.0 - u_pos) + u_pos * math.exp(-t)) / s
            elif t < 0.0:
                x = lo + math.log1p(u_pos * math.expm1(t)) / s
            else:
                x = lo + u_pos * (hi - lo)
            x = min(max(x, lo), hi)
        return x, vref + s * (x - ref)


def envelope_refine(envelope: Envelope, point: float, log_density_value: float) -> Envelope:
    """Envelope with ``point`` added; duplicates and infinite values are no-ops."""
    point = float(point)
    if not math.isfinite(log_density_value):
        return envelope
    xs = envelope._xs
    i = bisect.bisect_left(xs, point)
    if i < len(xs) and xs[i] == point:
        return envelope
    new_xs = xs[:i] + [point] + xs[i:]
    new_hs = envelope._hs[:i] + [float(log_density_value)] + envelope._hs[i:]
    return Envelope(new_xs, new_hs)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


class _Counted:
    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, x):
        self.n += 1
        v = float(self.f(x))
        if math.isnan(v):
            raise ConditionalSamplingError(f"log-density is NaN at x={x!r}")
        return v


def find_mode(log_density: Callable, lo: float, hi: float, tol: float = MODE_TOL) -> float:
    """Bisection on the sign of the central finite-difference slope.

    The bracket is widened geometrically (at most 60 times per side) until
    the slope is positive at ``lo`` and negative at ``hi``.
    """
    lo, hi = float(lo), float(hi)
    if not hi > lo:
        raise BracketError("bracket must satisfy lo < hi")
    width = hi - lo
    for _ in range(MAX_EXPANSIONS):
        if _fd_slope(log_density, lo) > 0.0:
            break
        lo -= width
        width *= 2.0
    else:
        raise BracketError("could not bracket the mode from the left")
    width = hi - lo
    for _ in range(MAX_EXPANSIONS):
        if _fd_slope(log_density, hi) < 0.0:
            break
        hi += width
        width *= 2.0
    else:
        raise BracketError("could not bracket the mode from the right")
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if _fd_slope(log_density, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _side_point(h, mode, hm, step, sign):
    for _ in range(MAX_EXPANSIONS):
        x = mode + sign * step
        hx = h(x)
        if hx == -math.inf:
            step *= 0.5
        elif hx >= hm:
            step *= 2.0
        else:
            return x, hx
    raise BracketError("could not place an initial abscissa below the mode value")


def initial_envelope(log_density: Callable, mode: float, scale: float) -> Envelope:
    """Three-point envelope at ``mode`` and ``mode -/+ scale`` (adjusted if needed)."""
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError("scale must be positive and finite")
    hm = log_density(mode)
    if not math.isfinite(hm):
        raise ConditionalSamplingError("log-density is not finite at the mode")
    xl, hl = _side_point(log_density, mode, hm, scale, -1.0)
    xr, hr = _side_point(log_density, mode, hm, scale, 1.0)
    return Envelope([xl, mode, xr], [hl, hm, hr])


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _pull_inside(envelope, log_density, x):
    xs = envelope._xs
    anchor = xs[0] if x < xs[0] else xs[-1] if x > xs[-1] else xs[bisect.bisect_left(xs, x)]
    for _ in range(MAX_EXPANSIONS):
        x = 0.5 * (x + anchor)
        hx = log_density(x)
        if hx > -math.inf:
            return x, hx
    return x, -math.inf


def ars_draw(envelope: Envelope, log_density: Callable, rng,
             max_proposals: int = MAX_PROPOSALS) -> tuple:
    """One exact draw; returns ``(x, refined envelope)``."""
    for _ in range(max_proposals):
        u_piece = rng.random()
        u_pos = rng.random()
        x, hv = envelope.propose(u_piece, u_pos)
        u_acc = rng.random()
        log_u = math.log(u_acc) if u_acc > 0.0 else -math.inf
        if log_u <= envelope.squeeze(x) - hv:
            return x, envelope
        hx = log_density(x)
        if hx > hv + HULL_TOL * max(1.0, abs(hv)):
            raise HullViolationError(
                f"log-density {hx:.10g} exceeds hull {hv:.10g} at x={x:.6g}: not log-concave"
            )
        if log_u <= hx - hv:
            return x, envelope
        if hx == -math.inf:
            # outside the support: refine at the first finite point on the way back
            x, hx = _pull_inside(envelope, log_density, x)
        envelope = envelope_refine(envelope, x, hx)
    raise ConditionalSamplingError(f"no acceptance after {max_proposals} proposals")


def ars_sample(log_density: Callable, init_bracket, rng, size: Optional[int] = None,
               mode: Optional[float] = None, scale: Optional[float] = None):
    """Exact draws from the density proportional to ``exp(log_density)``.

    Parameters
    ----------
    log_density : callable
        Concave function ``R -> [-inf, inf)``; concavity is checked
        opportunistically against the hull.
    init_bracket : (lo, hi)
        Interval expected to contain the mode; widened if it does not.
    rng : numpy.random.Generator
    size : int, optional
        Number of i.i.d. draws sharing one adaptively refined envelope.
    mode, scale : float, optional
        Known mode (skips the bisection) and spread proxy for the initial
        abscissae (default: half the bracket width).

    Returns
    -------
    (sample, evaluations)
        A float (or an array when ``size`` is given) and the number of
        log-density evaluations spent.
    """
    lo, hi = (float(v) for v in init_bracket)
    h = _Counted(log_density)
    if mode is None:
        mode = find_mode(h, lo, hi)
    if scale is None:
        scale = 0.5 * (hi - lo) if hi > lo else 1.0
    env = initial_envelope(h, float(mode), float(scale))
    n = 1 if size is None else int(size)
    out = np.empty(n)
    for i in range(n):
        out[i], env = ars_draw(env, h, rng)
    return (float(out[0]) if size is None else out), h.n


def conditional_mode_1d(deriv: Callable, x0: float, scale: float,
                        deriv2: Optional[Callable] = None, tol: float = 1e-10,
                        max_iter: int = 200) -> float:
    """Root of the increasing function ``deriv`` (the derivative of a convex potential).

    The bracket grows geometrically from ``x0`` in steps starting at
    ``scale``; inside it Newton steps (when ``deriv2`` is given) are taken
    and replaced by bisection whenever they leave the bracket.  Stops when
    ``|deriv| <= tol`` or the bracket collapses to rounding level.
    """
    from .errors import ModeError

    t = float(x0)
    g = deriv(t)
    if not math.isfinite(g):
        raise ModeError(f"derivative is not finite at x={t!r}")
    if abs(g) <= tol:
        return t
    direction = 1.0 if g < 0.0 else -1.0
    step = float(scale)
    inner = t
    for _ in range(MAX_EXPANSIONS):
        outer = t + direction * step
        go = deriv(outer)
        if (go > 0.0) == (direction > 0.0) or go == 0.0:
            break
        inner, g = outer, go
        step *= 2.0
    else:
        raise ModeError("could not bracket the conditional mode")
    if abs(go) <= tol:
        return outer
    lo, hi = (inner, outer) if direction > 0.0 else (outer, inner)
    t = inner
    for _ in range(max_iter):
        tn = 0.5 * (lo + hi)
        if deriv2 is not None:
            d2 = deriv2(t)
            if d2 > 0.0:
                cand = t - g / d2
                if lo < cand < hi:
                    tn = cand
        g = deriv(tn)
        t = tn
        if abs(g) <= tol:
            return t
        if g < 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= 4e-16 * max(1.0, abs(t)):
            return t
    raise ModeError("conditional mode search did not converge")
