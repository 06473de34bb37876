"""Backend selection for the hot loops.

The compiled module ``_core`` is used when it imports; otherwise (or when
the environment variable ``GIBBSKIT_PURE`` is set to a non-empty value) the
pure-Python reference ``_fallback`` is used.  Both share one signature and
consume the random stream identically.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback
from .errors import ConfigError
from .targets import GaussianTarget, RidgeTarget

try:
    if os.environ.get("GIBBSKIT_PURE"):
        raise ImportError("pure-Python backend requested")
    from . import _core
except ImportError:
    _core = None

BACKEND = "compiled" if _core is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _core is None:
            raise ConfigError("compiled backend is not available")
        return _core
    if backend == "python":
        return _fallback
    raise ConfigError(f"unknown backend {backend!r}")


def _checkpoints(checkpoints, steps):
    if checkpoints is None:
        return None
    cp = np.ascontiguousarray(checkpoints, dtype=np.int64)
    if cp.ndim != 1 or np.any(cp < 0) or np.any(cp > steps):
        raise ConfigError("checkpoints must lie in [0, steps]")
    return cp


def gaussian_gibbs(target: GaussianTarget, X, rng, steps: int, checkpoints=None,
                   functional=None, record_moves=False, backend=None):
    """Advance every row of ``X`` by ``steps`` single-site Gibbs updates (in place).

    Returns ``(snapshots, trace, moves)``; see :func:`gibbskit._fallback.gauss_gs_run`.
    """
    if not target.blocks.is_unit:
        raise ConfigError("the batched Gibbs kernel needs unit blocks")
    if X.dtype != np.float64 or not X.flags.c_contiguous or X.shape[1] != target.dim:
        raise ConfigError("X must be a C-contiguous float64 array with one row per replica")
    f = None if functional is None else np.ascontiguousarray(functional, dtype=float)
    Q = np.ascontiguousarray(target.precision)
    mean = np.ascontiguousarray(target.mean)
    return _impl(backend).gauss_gs_run(
        X, Q, mean, rng, int(steps), _checkpoints(checkpoints, steps), f, bool(record_moves)
    )


def ridge_gibbs(target: RidgeTarget, X, rng, steps: int, checkpoints=None,
                record_moves=False, backend=None):
    """Batched single-site Gibbs with exact ARS conditionals for a :class:`RidgeTarget`."""
    if not target.blocks.is_unit:
        raise ConfigError("the batched Gibbs kernel needs unit blocks")
    if X.dtype != np.float64 or not X.flags.c_contiguous or X.shape[1] != target.dim:
        raise ConfigError("X must be a C-contiguous float64 array with one row per replica")
    A = np.ascontiguousarray(target.A)
    ya = np.ascontiguousarray(target.labels @ A, dtype=float)
    return _impl(backend).ridge_gs_run(
        X, A, np.ascontiguousarray(target.c), ya, int(target.link_code),
        np.ascontiguousarray(target.block_L, dtype=float), rng, int(steps),
        _checkpoints(checkpoints, steps), bool(record_moves),
    )


def sequence_kl(law0, target: GaussianTarget, rng, n_seq: int, steps: int, backend=None):
    """``out[s, n]``: KL to the target after ``n`` updates along random sequence ``s``."""
    if not target.blocks.is_unit:
        raise ConfigError("sequence propagation needs unit blocks")
    m0 = np.ascontiguousarray(law0.mean, dtype=float)
    S0 = np.ascontiguousarray(law0.covariance, dtype=float)
    P0 = np.ascontiguousarray(law0.precision)
    Q = np.ascontiguousarray(target.precision)
    return _impl(backend).gauss_sequence_kl(
        m0, S0, P0, float(law0.logdet), Q, np.ascontiguousarray(target.mean),
        float(target.logdet_precision), rng, int(n_seq), int(steps),
    )
