"""Hot loops with a numba path and a pure-numpy path.

Set ``NOARB_DISABLE_NUMBA=1`` to force the numpy implementations (useful for
debugging and for machines without numba).  Dispatch reads ``USE_NUMBA`` at
call time, so tests can flip it.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("NOARB_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

numba_default = {"nopython": True, "nogil": True, "cache": True, "fastmath": False}


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.jit(**numba_default)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# first passage
# --------------------------------------------------------------------------


@_njit
def _first_hit_numba(values, level, up, start, stop):
    n = values.shape[0]
    out = np.empty(n, dtype=np.int64)
    for p in range(n):
        out[p] = stop
        for i in range(start[p], stop + 1):
            x = values[p, i]
            if (up and x >= level) or ((not up) and x <= level):
                out[p] = i
                break
    return out


def _first_hit_numpy(values, level, up, start, stop):
    idx = np.arange(values.shape[1])
    hit = values >= level if up else values <= level
    hit &= (idx[None, :] >= start[:, None]) & (idx[None, :] <= stop)
    any_hit = hit.any(axis=1)
    first = hit.argmax(axis=1)
    return np.where(any_hit, first, stop).astype(np.int64)


def first_hit(values: np.ndarray, level: float, up: bool, start: np.ndarray, stop: int) -> np.ndarray:
    """Index of the first grid point in ``[start, stop]`` at or beyond ``level``.

    Paths that never get there return ``stop``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    start = np.ascontiguousarray(start, dtype=np.int64)
    if USE_NUMBA:
        return _first_hit_numba(values, float(level), bool(up), start, int(stop))
    return _first_hit_numpy(values, float(level), bool(up), start, int(stop))


# --------------------------------------------------------------------------
# window extrema of X_{a+k} - X_a for k in [lo, hi]
# --------------------------------------------------------------------------


@_njit
def _window_extrema_numba(values, anchor, lo, hi):
    n, m = values.shape
    vmax = np.full(n, np.nan)
    vmin = np.full(n, np.nan)
    for p in range(n):
        a = anchor[p]
        i0 = a + lo
        i1 = min(a + hi, m - 1)
        if i0 > m - 1:
            continue
        base = values[p, a]
        mx = -np.inf
        mn = np.inf
        for i in range(i0, i1 + 1):
            d = values[p, i] - base
            if d > mx:
                mx = d
            if d < mn:
                mn = d
        vmax[p] = mx
        vmin[p] = mn
    return vmax, vmin


def _window_extrema_numpy(values, anchor, lo, hi):
    n, m = values.shape
    offs = np.arange(lo, hi + 1)
    cols = anchor[:, None] + offs[None, :]
    valid = cols <= m - 1
    cols = np.minimum(cols, m - 1)
    d = np.take_along_axis(values, cols, axis=1) - values[np.arange(n), anchor][:, None]
    vmax = np.where(valid, d, -np.inf).max(axis=1)
    vmin = np.where(valid, d, np.inf).min(axis=1)
    empty = ~valid.any(axis=1)
    vmax[empty] = np.nan
    vmin[empty] = np.nan
    return vmax, vmin


def window_extrema(values: np.ndarray, anchor: np.ndarray, lo: int, hi: int):
    """Per-path (max, min) of ``X[a+k] - X[a]`` over ``k in [lo, hi]``, clipped at the grid end.

    A window starting past the grid end yields NaN.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    anchor = np.ascontiguousarray(anchor, dtype=np.int64)
    if USE_NUMBA:
        return _window_extrema_numba(values, anchor, int(lo), int(hi))
    return _window_extrema_numpy(values, anchor, int(lo), int(hi))


# --------------------------------------------------------------------------
# Tanaka decomposition with optional cap on local time
# --------------------------------------------------------------------------


@_njit
def _tanaka_numba(b, cap):
    n, m = b.shape
    mart = np.zeros((n, m))
    loc = np.zeros((n, m))
    capped = np.empty((n, m))
    for p in range(n):
        tau = m - 1
        found = False
        for i in range(m - 1):
            s = 1.0 if b[p, i] > 0.0 else -1.0
            mart[p, i + 1] = mart[p, i] + s * (b[p, i + 1] - b[p, i])
        for i in range(m):
            loc[p, i] = abs(b[p, i]) - mart[p, i]
            if (not found) and loc[p, i] > cap:
                tau = i
                found = True
        for i in range(m):
            j = i if i < tau else tau
            capped[p, i] = mart[p, i] + loc[p, j]
    return mart, loc, capped


def _tanaka_numpy(b, cap):
    n, m = b.shape
    sgn = np.where(b[:, :-1] > 0.0, 1.0, -1.0)
    mart = np.zeros((n, m))
    np.cumsum(sgn * np.diff(b, axis=1), axis=1, out=mart[:, 1:])
    loc = np.abs(b) - mart
    over = loc > cap
    tau = np.where(over.any(axis=1), over.argmax(axis=1), m - 1)
    cols = np.minimum(np.arange(m)[None, :], tau[:, None])
    capped = mart + np.take_along_axis(loc, cols, axis=1)
    return mart, loc, capped


def tanaka(b: np.ndarray, cap: float = math.inf):
    """Discrete sign integral ``M``, local time ``L = |B| - M`` and ``M + L`` stopped at the cap."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    if USE_NUMBA:
        return _tanaka_numba(b, float(cap))
    return _tanaka_numpy(b, float(cap))


# --------------------------------------------------------------------------
# Marchaud fractional derivative, product integration with linear interpolation
# --------------------------------------------------------------------------


def _cell_weights(m_max: int, alpha: float):
    """Weights on g_{m-1} and g_m for the cell r in [(m-1)dt, m dt] (units dt^-alpha)."""
    m = np.arange(m_max + 1, dtype=np.float64)
    a = np.zeros(m_max + 1)
    b = np.zeros(m_max + 1)
    if m_max >= 1:
        b[1] = 1.0 / (1.0 - alpha)
    if m_max >= 2:
        mm = m[2:]
        A = ((mm - 1.0) ** -alpha - mm**-alpha) / alpha
        B = (mm ** (1.0 - alpha) - (mm - 1.0) ** (1.0 - alpha)) / (1.0 - alpha)
        a[2:] = mm * A - B
        b[2:] = B - (mm - 1.0) * A
    return a, b


@_njit
def _marchaud_numba(f, dt, alpha, a, b, gamma_inv):
    m = f.shape[0]
    out = np.empty(m)
    out[0] = 0.0 if f[0] == 0.0 else np.nan
    scale = dt**-alpha
    for i in range(1, m):
        acc = 0.0
        for k in range(1, i + 1):
            gk = f[i] - f[i - k]
            w = b[k]
            if k < i:
                w += a[k + 1]
            acc += w * gk
        t = i * dt
        out[i] = gamma_inv * (f[i] * t**-alpha + alpha * scale * acc)
    return out


def _marchaud_numpy(f, dt, alpha, a, b, gamma_inv):
    m = f.shape[0]
    # interior cells weigh g_k by b_k + a_{k+1}; the cell touching s=0 only by b_k
    c = np.zeros(m)
    c[1:] = b[1:m] + a[2 : m + 1]
    conv = np.convolve(f, c)[:m]
    wsum = np.cumsum(c) - c + b[:m]
    acc = f * wsum - (conv + (b[:m] - c) * f[0])
    out = np.empty(m)
    t = np.arange(1, m) * dt
    out[1:] = gamma_inv * (f[1:] * t**-alpha + alpha * dt**-alpha * acc[1:])
    out[0] = 0.0 if f[0] == 0.0 else np.nan
    return out


def marchaud(f: np.ndarray, dt: float, alpha: float) -> np.ndarray:
    """Marchaud derivative of order ``alpha`` in (0, 1) of grid samples ``f`` (``f[0]`` at t=0)."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if alpha == 0.0:
        return f.copy()
    a, b = _cell_weights(f.shape[0], alpha)
    gamma_inv = 1.0 / math.gamma(1.0 - alpha)
    if USE_NUMBA:
        return _marchaud_numba(f, float(dt), float(alpha), a, b, gamma_inv)
    return _marchaud_numpy(f, float(dt), float(alpha), a, b, gamma_inv)
