# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Semantics are defined by ``_fallback.py``; every
floating-point expression here is written in the same order so the two
backends produce the same numbers from the same random stream."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, log1p, expm1, tanh, sqrt, fabs, INFINITY, isfinite
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

from .errors import (BracketError, ConditionalSamplingError, HullViolationError,
                     ModeError, NumericalError)

cnp.import_array()

DEF CAP = 512
DEF PCAP = 1026
DEF MAX_EXPANSIONS = 60
DEF MAX_PROPOSALS = 10000
DEF MAX_NEWTON = 200
cdef double HULL_TOL = 1e-8
cdef double MODE_TOL = 1e-10
cdef double LOG2 = log(2.0)

# status codes returned from nogil sections
DEF OK = 0
DEF E_HULL = 1
DEF E_BRACKET = 2
DEF E_PROPOSALS = 3
DEF E_MODE = 4
DEF E_CAPACITY = 5
DEF E_NUMERIC = 6


cdef bitgen_t* _bitgen(object rng) except NULL:
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t* bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef object _raise(int status):
    if status == E_HULL:
        raise HullViolationError("log-density exceeded the rejection hull: not log-concave")
    if status == E_BRACKET:
        raise BracketError("could not bracket the conditional mode")
    if status == E_PROPOSALS:
        raise ConditionalSamplingError("no acceptance after the maximal number of proposals")
    if status == E_MODE:
        raise ModeError("conditional mode search failed")
    if status == E_CAPACITY:
        raise ConditionalSamplingError("rejection envelope capacity exhausted")
    raise NumericalError("numerical failure in compiled kernel")


# ---------------------------------------------------------------------------
# ridge conditionals
# ---------------------------------------------------------------------------

cdef inline double _phi(int code, double z) noexcept nogil:
    cdef double a
    if code == 0:
        if z > 0.0:
            return z + log1p(exp(-z))
        return log1p(exp(z))
    a = fabs(z)
    return a + log1p(exp(-2.0 * a)) - LOG2


cdef inline double _dphi(int code, double z) noexcept nogil:
    if code == 0:
        return 0.5 * (1.0 + tanh(0.5 * z))
    return tanh(z)


cdef inline double _d2phi(int code, double z) noexcept nogil:
    cdef double s, t
    if code == 0:
        s = 0.5 * (1.0 + tanh(0.5 * z))
        return s * (1.0 - s)
    t = tanh(z)
    return 1.0 - t * t


cdef struct Cond:
    const double* col
    const double* base
    Py_ssize_t nr
    Py_ssize_t stride
    double ci
    double ya
    int code


cdef inline double _cond_logd(Cond* c, double t) noexcept nogil:
    cdef double u = 0.5 * c.ci * t * t - c.ya * t
    cdef Py_ssize_t j
    for j in range(c.nr):
        u += _phi(c.code, c.base[j] + c.col[j * c.stride] * t)
    return -u


cdef inline double _cond_deriv(Cond* c, double t) noexcept nogil:
    cdef double g = c.ci * t - c.ya
    cdef double a
    cdef Py_ssize_t j
    for j in range(c.nr):
        a = c.col[j * c.stride]
        g += a * _dphi(c.code, c.base[j] + a * t)
    return g


cdef inline double _cond_deriv2(Cond* c, double t) noexcept nogil:
    cdef double h = c.ci
    cdef double a
    cdef Py_ssize_t j
    for j in range(c.nr):
        a = c.col[j * c.stride]
        h += a * a * _d2phi(c.code, c.base[j] + a * t)
    return h


cdef int _mode(Cond* c, double x0, double scale, double* out) noexcept nogil:
    cdef double t = x0, g, go, outer, inner, step, lo, hi, tn, d2, cand
    cdef double direction
    cdef int it
    g = _cond_deriv(c, t)
    if not isfinite(g):
        return E_MODE
    if fabs(g) <= MODE_TOL:
        out[0] = t
        return OK
    direction = 1.0 if g < 0.0 else -1.0
    step = scale
    inner = t
    it = 0
    while True:
        if it == MAX_EXPANSIONS:
            return E_MODE
        outer = t + direction * step
        go = _cond_deriv(c, outer)
        if (go > 0.0) == (direction > 0.0) or go == 0.0:
            break
        inner = outer
        g = go
        step *= 2.0
        it += 1
    if fabs(go) <= MODE_TOL:
        out[0] = outer
        return OK
    if direction > 0.0:
        lo = inner
        hi = outer
    else:
        lo = outer
        hi = inner
    t = inner
    for it in range(MAX_NEWTON):
        tn = 0.5 * (lo + hi)
        d2 = _cond_deriv2(c, t)
        if d2 > 0.0:
            cand = t - g / d2
            if lo < cand and cand < hi:
                tn = cand
        g = _cond_deriv(c, tn)
        t = tn
        if fabs(g) <= MODE_TOL:
            out[0] = t
            return OK
        if g < 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= 4e-16 * (fabs(t) if fabs(t) > 1.0 else 1.0):
            out[0] = t
            return OK
    return E_MODE


# ---------------------------------------------------------------------------
# secant-hull envelope
# ---------------------------------------------------------------------------

cdef struct Env:
    int k
    int npc
    double xs[CAP]
    double hs[CAP]
    double plo[PCAP]
    double phi_[PCAP]
    double pref[PCAP]
    double pv[PCAP]
    double ps[PCAP]
    double cum[PCAP]


cdef inline double _piece_log_mass(double lo, double hi, double vref, double s) noexcept nogil:
    cdef double w, t
    if lo == -INFINITY:
        return vref - log(s)
    if hi == INFINITY:
        return vref - log(-s)
    w = hi - lo
    t = s * w
    if t > 0.0:
        return vref + t + log(-expm1(-t)) - log(s)
    if t < 0.0:
        return vref + log(-expm1(t)) - log(-s)
    return vref + log(w)


cdef inline void _add_piece(Env* e, double lo, double hi, double ref, double v, double s) noexcept nogil:
    cdef int p = e.npc
    e.plo[p] = lo
    e.phi_[p] = hi
    e.pref[p] = ref
    e.pv[p] = v
    e.ps[p] = s
    e.npc = p + 1


cdef int _build(Env* e) noexcept nogil:
    cdef int k = e.k, i, j, p
    cdef double c[CAP]
    cdef double lm[PCAP]
    cdef double a, b, cl, cr, z, top, total, acc, cap
    for j in range(k - 1):
        c[j] = (e.hs[j + 1] - e.hs[j]) / (e.xs[j + 1] - e.xs[j])
    for j in range(1, k - 1):
        cap = fabs(c[j - 1])
        if cap < 1.0:
            cap = 1.0
        if c[j] > c[j - 1] + HULL_TOL * cap:
            return E_HULL
    if not (c[0] > 0.0 and c[k - 2] < 0.0):
        return E_BRACKET
    e.npc = 0
    _add_piece(e, -INFINITY, e.xs[0], e.xs[0], e.hs[0], c[0])
    for i in range(k - 1):
        a = e.xs[i]
        b = e.xs[i + 1]
        if i >= 1 and i + 1 <= k - 2:
            cl = c[i - 1]
            cr = c[i + 1]
            if cl > cr:
                z = (e.hs[i + 1] - e.hs[i] - cr * b + cl * a) / (cl - cr)
                if z < a:
                    z = a
                if z > b:
                    z = b
            else:
                z = b
            if z > a:
                _add_piece(e, a, z, a, e.hs[i], cl)
            if z < b:
                _add_piece(e, z, b, z, e.hs[i + 1] + cr * (z - b), cr)
        elif i >= 1:
            _add_piece(e, a, b, a, e.hs[i], c[i - 1])
        else:
            _add_piece(e, a, b, a, e.hs[i + 1] + c[i + 1] * (a - b), c[i + 1])
    _add_piece(e, e.xs[k - 1], INFINITY, e.xs[k - 1], e.hs[k - 1], c[k - 2])
    top = -INFINITY
    for p in range(e.npc):
        lm[p] = _piece_log_mass(e.plo[p], e.phi_[p], e.pv[p], e.ps[p])
        if lm[p] > top:
            top = lm[p]
    total = 0.0
    for p in range(e.npc):
        lm[p] = exp(lm[p] - top)
        total += lm[p]
    acc = 0.0
    for p in range(e.npc):
        acc += lm[p] / total
        e.cum[p] = acc
    e.cum[e.npc - 1] = 1.0
    return OK


cdef int _refine(Env* e, double x, double hx) noexcept nogil:
    cdef int i = 0, j
    if not isfinite(hx):
        return OK
    while i < e.k and e.xs[i] < x:
        i += 1
    if i < e.k and e.xs[i] == x:
        return OK
    if e.k == CAP:
        return E_CAPACITY
    j = e.k
    while j > i:
        e.xs[j] = e.xs[j - 1]
        e.hs[j] = e.hs[j - 1]
        j -= 1
    e.xs[i] = x
    e.hs[i] = hx
    e.k += 1
    return _build(e)


cdef inline double _squeeze(Env* e, double x) noexcept nogil:
    cdef int i = 0
    cdef double t
    if x < e.xs[0] or x > e.xs[e.k - 1]:
        return -INFINITY
    while i < e.k and e.xs[i] <= x:
        i += 1
    i -= 1
    if i > e.k - 2:
        i = e.k - 2
    t = (x - e.xs[i]) / (e.xs[i + 1] - e.xs[i])
    return e.hs[i] + t * (e.hs[i + 1] - e.hs[i])


cdef inline double _propose(Env* e, double u_piece, double u_pos, double* hv) noexcept nogil:
    cdef int j = 0
    cdef double lo, hi, s, t, x
    while j < e.npc and e.cum[j] <= u_piece:
        j += 1
    if j > e.npc - 1:
        j = e.npc - 1
    lo = e.plo[j]
    hi = e.phi_[j]
    s = e.ps[j]
    if lo == -INFINITY:
        x = hi + log1p(-u_pos) / s
    elif hi == INFINITY:
        x = lo + log1p(-u_pos) / s
    else:
        t = s * (hi - lo)
        if t > 0.0:
            x = hi + log((1.0 - u_pos) + u_pos * exp(-t)) / s
        elif t < 0.0:
            x = lo + log1p(u_pos * expm1(t)) / s
        else:
            x = lo + u_pos * (hi - lo)
        if x < lo:
            x = lo
        if x > hi:
            x = hi
    hv[0] = e.pv[j] + s * (x - e.pref[j])
    return x


cdef int _side(Cond* c, double mode, double hm, double step, double sign,
               double* xo, double* ho) noexcept nogil:
    cdef int it
    cdef double x, hx
    for it in range(MAX_EXPANSIONS):
        x = mode + sign * step
        hx = _cond_logd(c, x)
        if hx == -INFINITY:
            step *= 0.5
        elif hx >= hm:
            step *= 2.0
        else:
            xo[0] = x
            ho[0] = hx
            return OK
    return E_BRACKET


cdef int _ridge_draw(Cond* c, double x0, double block_L, bitgen_t* bg, Env* e,
                     double* out) noexcept nogil:
    cdef double scale = 1.0 / sqrt(block_L)
    cdef double mode, hm, x, hv, hx, u, log_u, cap
    cdef int st, it
    st = _mode(c, x0, scale, &mode)
    if st != OK:
        return st
    hm = _cond_logd(c, mode)
    if not isfinite(hm):
        return E_NUMERIC
    st = _side(c, mode, hm, scale, -1.0, &e.xs[0], &e.hs[0])
    if st != OK:
        return st
    st = _side(c, mode, hm, scale, 1.0, &e.xs[2], &e.hs[2])
    if st != OK:
        return st
    e.xs[1] = mode
    e.hs[1] = hm
    e.k = 3
    st = _build(e)
    if st != OK:
        return st
    for it in range(MAX_PROPOSALS):
        u = _uniform(bg)
        x = _propose(e, u, _uniform(bg), &hv)
        u = _uniform(bg)
        log_u = log(u) if u > 0.0 else -INFINITY
        if log_u <= _squeeze(e, x) - hv:
            out[0] = x
            return OK
        hx = _cond_logd(c, x)
        cap = fabs(hv)
        if cap < 1.0:
            cap = 1.0
        if hx > hv + HULL_TOL * cap:
            return E_HULL
        if log_u <= hx - hv:
            out[0] = x
            return OK
        st = _refine(e, x, hx)
        if st != OK:
            return st
    return E_PROPOSALS


# ---------------------------------------------------------------------------
# public kernels
# ---------------------------------------------------------------------------

def gauss_gs_run(double[:, ::1] X, const double[:, ::1] Q, const double[::1] mean, rng, Py_ssize_t steps,
                 const cnp.int64_t[::1] checkpoints=None, const double[::1] functional=None,
                 bint record_moves=False):
    cdef Py_ssize_t R = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t r, n, i, j, k, K
    cdef double acc, z, s
    cdef bitgen_t* bg = _bitgen(rng)
    cdef double[::1] inv_sd = np.empty(d)
    cdef double[::1] x
    K = 0 if checkpoints is None else checkpoints.shape[0]
    snaps_arr = np.empty((R, K, d)) if K else None
    trace_arr = np.empty((R, steps)) if functional is not None else None
    moves_arr = np.empty((R, steps), dtype=np.int64) if record_moves else None
    cdef double[:, :, ::1] snaps = snaps_arr
    cdef double[:, ::1] trace = trace_arr
    cdef cnp.int64_t[:, ::1] moves = moves_arr
    cdef bint do_trace = functional is not None
    for i in range(d):
        inv_sd[i] = 1.0 / sqrt(Q[i, i])
    with rng.bit_generator.lock, nogil:
        for r in range(R):
            x = X[r]
            for k in range(K):
                if checkpoints[k] == 0:
                    snaps[r, k, :] = x
            for n in range(steps):
                i = <Py_ssize_t>(_uniform(bg) * d)
                z = random_standard_normal(bg)
                acc = 0.0
                for j in range(d):
                    if j != i:
                        acc += Q[i, j] * (x[j] - mean[j])
                x[i] = mean[i] - acc / Q[i, i] + z * inv_sd[i]
                if record_moves:
                    moves[r, n] = i
                if do_trace:
                    s = 0.0
                    for j in range(d):
                        s += functional[j] * x[j]
                    trace[r, n] = s
                for k in range(K):
                    if checkpoints[k] == n + 1:
                        snaps[r, k, :] = x
    return snaps_arr, trace_arr, moves_arr


def ridge_gs_run(double[:, ::1] X, const double[:, ::1] A, const double[::1] c, const double[::1] ya,
                 int link_code, const double[::1] block_L, rng, Py_ssize_t steps,
                 const cnp.int64_t[::1] checkpoints=None,
                 bint record_moves=False):
    cdef Py_ssize_t R = X.shape[0], d = X.shape[1], nr = A.shape[0]
    cdef Py_ssize_t r, n, i, j, k, K
    cdef double s, xi, xn
    cdef int st = OK
    cdef bitgen_t* bg = _bitgen(rng)
    cdef double[::1] zbuf = np.zeros(max(nr, 1))
    cdef double[::1] base = np.zeros(max(nr, 1))
    cdef double[::1] x
    cdef Cond cond
    cdef Env* env
    env_holder = np.empty(sizeof(Env), dtype=np.uint8)
    cdef cnp.uint8_t[::1] env_bytes = env_holder
    env = <Env*> &env_bytes[0]
    K = 0 if checkpoints is None else checkpoints.shape[0]
    snaps_arr = np.empty((R, K, d)) if K else None
    moves_arr = np.empty((R, steps), dtype=np.int64) if record_moves else None
    cdef double[:, :, ::1] snaps = snaps_arr
    cdef cnp.int64_t[:, ::1] moves = moves_arr
    cond.base = &base[0]
    cond.nr = nr
    cond.stride = d
    cond.code = link_code
    with rng.bit_generator.lock, nogil:
        for r in range(R):
            x = X[r]
            for j in range(nr):
                s = 0.0
                for i in range(d):
                    s += A[j, i] * x[i]
                zbuf[j] = s
            for k in range(K):
                if checkpoints[k] == 0:
                    snaps[r, k, :] = x
            for n in range(steps):
                i = <Py_ssize_t>(_uniform(bg) * d)
                xi = x[i]
                for j in range(nr):
                    base[j] = zbuf[j] - A[j, i] * xi
                cond.col = &A[0, i]
                cond.ci = c[i]
                cond.ya = ya[i]
                st = _ridge_draw(&cond, xi, block_L[i], bg, env, &xn)
                if st != OK:
                    break
                x[i] = xn
                for j in range(nr):
                    zbuf[j] = base[j] + A[j, i] * xn
                if record_moves:
                    moves[r, n] = i
                for k in range(K):
                    if checkpoints[k] == n + 1:
                        snaps[r, k, :] = x
            if st != OK:
                break
    if st != OK:
        _raise(st)
    return snaps_arr, None, moves_arr


cdef double _kl_state(double[::1] m, double[:, ::1] S, double logdet, const double[:, ::1] Q,
                      const double[::1] mu, double logdet_Q, Py_ssize_t d) noexcept nogil:
    cdef double tr = 0.0, quad = 0.0, da
    cdef Py_ssize_t a, b
    for a in range(d):
        da = m[a] - mu[a]
        for b in range(d):
            tr += Q[a, b] * S[a, b]
            quad += da * Q[a, b] * (m[b] - mu[b])
    return 0.5 * (tr + quad - d - logdet_Q - logdet)


def gauss_sequence_kl(const double[::1] mean0, const double[:, ::1] cov0, const double[:, ::1] P0,
                      double logdet0, const double[:, ::1] Q, const double[::1] mu, double logdet_Q, rng,
                      Py_ssize_t n_seq, Py_ssize_t steps):
    cdef Py_ssize_t d = Q.shape[0]
    cdef Py_ssize_t s, n, i, a, b, j
    cdef double qii, pii, pa, acc, t, logdet
    cdef bint bad = False
    cdef bitgen_t* bg = _bitgen(rng)
    out_arr = np.empty((n_seq, steps + 1))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] m = np.empty(d)
    cdef double[:, ::1] S = np.empty((d, d))
    cdef double[:, ::1] P = np.empty((d, d))
    with rng.bit_generator.lock, nogil:
        for s in range(n_seq):
            m[:] = mean0
            S[:, :] = cov0
            P[:, :] = P0
            logdet = logdet0
            out[s, 0] = _kl_state(m, S, logdet, Q, mu, logdet_Q, d)
            for n in range(steps):
                i = <Py_ssize_t>(_uniform(bg) * d)
                qii = Q[i, i]
                pii = P[i, i]
                if not pii > 0.0:
                    bad = True
                    break
                for a in range(d):
                    if a == i:
                        continue
                    pa = P[a, i] / pii
                    for b in range(d):
                        if b != i:
                            P[a, b] = P[a, b] - pa * P[i, b] + Q[i, a] * Q[i, b] / qii
                for a in range(d):
                    P[a, i] = Q[i, a]
                    P[i, a] = Q[i, a]
                logdet = logdet + log(pii) - log(qii)
                acc = 0.0
                for j in range(d):
                    if j != i:
                        acc += Q[i, j] * (m[j] - mu[j])
                m[i] = mu[i] - acc / qii
                for a in range(d):
                    if a == i:
                        continue
                    t = 0.0
                    for j in range(d):
                        if j != i:
                            t += Q[i, j] * S[j, a]
                    S[i, a] = -t / qii
                    S[a, i] = S[i, a]
                t = 0.0
                for j in range(d):
                    if j != i:
                        t += Q[i, j] * S[i, j]
                S[i, i] = -t / qii + 1.0 / qii
                out[s, n + 1] = _kl_state(m, S, logdet, Q, mu, logdet_Q, d)
            if bad:
                break
    if bad:
        raise NumericalError("propagated precision lost positivity")
    return out_arr
