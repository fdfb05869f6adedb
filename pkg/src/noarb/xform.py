"""Strictly monotone maps, continuous time changes and QV-drift processes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._io import format_number
from .procgen import Path, ProcessSpec, QVPath, TimeGrid, _power0, realized_quadratic_variation, simulate

# -- monotone maps -----------------------------------------------------------


@dataclass(frozen=True)
class MonotoneMap:
    """A strictly monotone real function.

    kinds: ``exp``, ``log`` (positive arguments only), ``power`` (odd integer
    ``p`` or ``p = 1/3``), ``cbrt``, ``affine`` (``a*x + b``, ``a != 0``),
    ``arctan``, ``cubic_linear`` (``x**3 + x``) and ``table`` (piecewise
    linear through strictly monotone knots ``xs -> ys``).
    """

    kind: str
    p: float = 3.0
    a: float = 1.0
    b: float = 0.0
    xs: tuple = ()
    ys: tuple = ()

    def __post_init__(self):
        k = self.kind
        if k not in ("exp", "log", "power", "cbrt", "affine", "arctan", "cubic_linear", "table", "identity"):
            raise ValueError(f"unknown monotone map {k!r}")
        if k == "affine" and self.a == 0:
            raise ValueError("affine map needs a != 0")
        if k == "power" and not (_is_odd_int(self.p) or abs(self.p - 1 / 3) < 1e-15):
            raise ValueError("power map needs an odd integer exponent or 1/3")
        if k == "table":
            xs, ys = np.asarray(self.xs, float), np.asarray(self.ys, float)
            if xs.size < 2 or xs.shape != ys.shape or np.any(np.diff(xs) <= 0):
                raise ValueError("table needs >= 2 strictly increasing knots xs with matching ys")
            dy = np.diff(ys)
            if not (np.all(dy > 0) or np.all(dy < 0)):
                raise ValueError("table values are not strictly monotone")
            object.__setattr__(self, "xs", tuple(xs.tolist()))
            object.__setattr__(self, "ys", tuple(ys.tolist()))

    @classmethod
    def identity(cls):
        return cls("identity")

    @property
    def increasing(self) -> bool:
        if self.kind == "affine":
            return self.a > 0
        if self.kind == "table":
            return self.ys[-1] > self.ys[0]
        return True

    def domain_ok(self, x: np.ndarray) -> bool:
        if self.kind == "log":
            return bool(np.all(x > 0))
        if self.kind == "table":
            return bool(np.all((x >= self.xs[0]) & (x <= self.xs[-1])))
        return bool(np.all(np.isfinite(x)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "identity":
            return x.copy()
        if k == "exp":
            return np.exp(x)
        if k == "log":
            return np.log(x)
        if k == "cbrt" or (k == "power" and not _is_odd_int(self.p)):
            return np.cbrt(x)
        if k == "power":
            return x ** int(self.p)
        if k == "affine":
            return self.a * x + self.b
        if k == "arctan":
            return np.arctan(x)
        if k == "cubic_linear":
            return x**3 + x
        return np.interp(x, self.xs, self.ys)

    def check_strict(self, lo: float, hi: float, n_probe: int = 4097) -> bool:
        """Strict monotonicity on a dense probe grid over ``[lo, hi]``."""
        if not hi > lo:
            return True
        probe = np.linspace(lo, hi, n_probe)
        d = np.diff(self(probe))
        return bool(np.all(d > 0) if self.increasing else np.all(d < 0))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "power":
            d["p"] = self.p
        if self.kind == "affine":
            d.update(a=self.a, b=self.b)
        if self.kind == "table":
            d.update(xs=list(self.xs), ys=list(self.ys))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MonotoneMap":
        d = dict(d)
        for key in ("xs", "ys"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _is_odd_int(p: float) -> bool:
    return float(p).is_integer() and int(p) % 2 == 1


def apply_monotone(f: MonotoneMap, path: Union[Path, np.ndarray]):
    """Pointwise image ``f(X)``, after checking domain and strict monotonicity on the value range."""
    x = path.values if isinstance(path, Path) else np.asarray(path, float)
    if not f.domain_ok(x):
        raise ValueError(f"path values leave the domain of {f.kind}")
    lo, hi = float(np.min(x)), float(np.max(x))
    if not f.check_strict(lo, hi):
        raise ValueError(f"{f.kind} is not strictly monotone on [{lo}, {hi}] at float precision")
    y = f(x)
    return Path(path.grid, y) if isinstance(path, Path) else y


# -- time changes --------------------------------------------------------------


@dataclass(frozen=True)
class TimeChange:
    """Nondecreasing clock ``nu`` on ``grid`` and its right-continuous inverse.

    ``C_s = inf{t : nu_t > s}``, evaluated by linear interpolation between
    grid nodes; ``nan`` for ``s`` at or above the attained range.
    """

    grid: TimeGrid
    nu: np.ndarray
    C: np.ndarray = field(repr=False)

    def inverse_at(self, s) -> np.ndarray:
        return _right_inverse(self.grid.times, self.nu, np.asarray(s, float))

    def index_map(self, target: TimeGrid) -> np.ndarray:
        """Grid index ``floor(nu_i / dt)`` on ``target`` for every node ``i`` of this clock."""
        idx = np.floor(self.nu / target.dt + 1e-9).astype(np.int64)
        if np.any(idx > target.N) or np.any(~np.isfinite(self.nu)):
            raise ValueError(f"time change reaches {np.nanmax(self.nu):.6g}, past the horizon {target.T}")
        return idx

    def to_csv(self, file) -> None:
        t = self.grid.times
        lines = ["t,nu,C"] + [",".join(format_number(v) for v in (t[i], self.nu[i], self.C[i])) for i in range(t.size)]
        text = "\n".join(lines) + "\n"
        if hasattr(file, "write"):
            file.write(text)
        else:
            with open(file, "w", newline="") as fh:
                fh.write(text)


def _right_inverse(t: np.ndarray, nu: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``inf{t : nu(t) > s}`` with ``nu`` linear between nodes."""
    j = np.searchsorted(nu, s, side="right")  # first node with nu > s
    out = np.full(s.shape, np.nan)
    ok = j < nu.size
    jj = j[ok]
    prev = np.maximum(jj - 1, 0)
    lo, hi = nu[prev], nu[jj]
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (s[ok] - lo) / span, 1.0)
    w = np.clip(w, 0.0, 1.0)
    res = t[prev] + w * (t[jj] - t[prev])
    res = np.where(jj == 0, t[0], res)
    out[ok] = res
    return out


def build_time_change(base: Union[Path, QVPath, np.ndarray], grid: Optional[TimeGrid] = None) -> TimeChange:
    """Time change from a nondecreasing single path (e.g. a realized QV)."""
    if isinstance(base, (Path, QVPath)):
        grid = base.grid
        nu = np.asarray(base.values, float)
    else:
        if grid is None:
            raise ValueError("a grid is required for array input")
        nu = np.asarray(base, float)
    if nu.ndim != 1 or nu.size != grid.N + 1:
        raise ValueError("time change base must be a single path on the grid")
    if np.any(np.diff(nu) < 0):
        raise ValueError("time change base is decreasing somewhere")
    if abs(nu[0]) > 1e-15:
        raise ValueError("time change must start at 0")
    C = _right_inverse(grid.times, nu, grid.times)
    return TimeChange(grid, nu, C)


def time_change_path(path: Path, tc: TimeChange) -> Path:
    """``X~_t = X_{nu_t}`` on the clock's grid, reading the nearest grid index at or below ``nu_t``."""
    idx = tc.index_map(path.grid)
    return Path(tc.grid, path.batch()[:, idx] if path.is_batch else path.values[idx])


def tilde_at(path: Path, tc: TimeChange, c) -> np.ndarray:
    """``X~_c = X_{nu_c}`` at arbitrary clock times ``c`` (``nu`` linear between nodes).

    One value per path; ``c`` broadcasts against the batch.
    """
    c = np.asarray(c, float)
    if np.any(~np.isfinite(c)):
        raise ValueError("clock time outside the attained range")
    nu_c = np.interp(c, tc.grid.times, tc.nu)
    j = np.floor(nu_c / path.grid.dt + 1e-9).astype(np.int64)
    if np.any(j > path.grid.N):
        raise ValueError("time change reaches past the horizon of the path")
    x = path.batch()
    rows = np.arange(x.shape[0])
    return x[rows, np.broadcast_to(j, rows.shape)]


def gains_correspondence(path: Path, tc: TimeChange, j0, j1):
    """Gains of ``1_(t0, t1]`` on ``X`` and of ``1_(C_t0, C_t1]`` on ``X~``.

    ``j0, j1`` are per-path stop indices on the grid of ``X``; their times must
    lie in the attained range of the clock.  Returns ``(gain_X, gain_tilde,
    C_t0, C_t1)``.
    """
    x = path.batch()
    rows = np.arange(x.shape[0])
    j0, j1 = np.broadcast_to(j0, rows.shape), np.broadcast_to(j1, rows.shape)
    t = path.grid.times
    c0, c1 = tc.inverse_at(t[j0]), tc.inverse_at(t[j1])
    if np.any(np.isnan(c0)) or np.any(np.isnan(c1)):
        raise ValueError("a stop lies outside the attained range of the clock")
    g = x[rows, j1] - x[rows, j0]
    gt = tilde_at(path, tc, c1) - tilde_at(path, tc, c0)
    return g, gt, c0, c1


def gains_pullback(path: Path, tc: TimeChange, k0, k1):
    """Gains of ``1_(k0, k1]`` on the sampled ``X~`` and of ``1_(nu_k0, nu_k1]`` on ``X``."""
    xt = time_change_path(path, tc).batch()
    x = path.batch()
    rows = np.arange(x.shape[0])
    k0, k1 = np.broadcast_to(k0, rows.shape), np.broadcast_to(k1, rows.shape)
    m = tc.index_map(path.grid)
    return xt[rows, k1] - xt[rows, k0], x[rows, m[k1]] - x[rows, m[k0]]


# -- QV drift -------------------------------------------------------------------


def qv_drift_values(s: np.ndarray, alpha: float) -> np.ndarray:
    qv = np.zeros_like(s)
    np.cumsum(np.diff(s, axis=-1) ** 2, axis=-1, out=qv[..., 1:])
    return s + _power0(qv, alpha)


def qv_drift_process(base: ProcessSpec, alpha: float, grid: TimeGrid, seed: int, n_paths: Optional[int] = None) -> Path:
    """``Z = S + [S, S]^alpha`` with the realized QV of the sampled ``S``."""
    s = simulate(base, grid, 1 if n_paths is None else n_paths, seed)["X"]
    z = qv_drift_values(s, alpha)
    return Path(grid, z if n_paths is not None else z[0])


def qv_time_change(path: Path) -> TimeChange:
    return build_time_change(realized_quadratic_variation(path))
