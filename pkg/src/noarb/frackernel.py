"""Volterra kernel of fBm for H > 1/2, its operator, inverse and Girsanov density.

With ``a = H - 1/2`` the kernel is

    K(t, s) = C_H [ (t/s)^a (t-s)^a - a s^-a \\int_s^t u^(a-1) (u-s)^a du ],  0 < s < t,

and the inverse of ``(K h)(t) = \\int_0^t K(t, s) h(s) ds`` is

    K^-1 g (s) = s^a D^a[u^-a g'(u)](s) / (C_H Gamma(1 + a)).

``C_H`` is fixed by requiring ``Var(\\int_0^1 K(1, s) dB_s) = 1``.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import integrate, special

from . import _accel
from ._io import format_number
from .procgen import MuSpec, Path, TimeGrid, _rng, brownian_values


def _check_h(H: float) -> float:
    if not (0.5 <= H < 1.0):
        raise ValueError(f"kernel representation needs 1/2 <= H < 1, got {H}")
    return H - 0.5


def _inner_quad(H: float, t: float, s: float) -> float:
    a = H - 0.5
    val, _ = integrate.quad(lambda u: u ** (a - 1.0), s, t, weight="alg", wvar=(a, 0.0), epsabs=1e-15, epsrel=1e-10, limit=200)
    return val


def _inner_closed(H, t, s):
    """``\\int_s^t u^(a-1) (u-s)^a du`` through the Gauss hypergeometric function."""
    z = 1.0 - np.asarray(s, float) / np.asarray(t, float)
    return s ** (2 * H - 1) * z ** (H + 0.5) / (H + 0.5) * special.hyp2f1(2 * H, H + 0.5, H + 1.5, z)


def _bracket(H, t, s):
    a = H - 0.5
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    out = np.zeros(t.shape)
    m = (s > 0) & (s < t)
    tm, sm = t[m], s[m]
    out[m] = (tm / sm) ** a * (tm - sm) ** a - a * sm ** (-a) * _inner_closed(H, tm, sm)
    return out


@functools.lru_cache(maxsize=64)
def calibrated_constant(H: float) -> float:
    """``C_H`` with ``\\int_0^1 K(1, s)^2 ds = 1``."""
    _check_h(H)
    if H == 0.5:
        return 1.0
    val, _ = integrate.quad(lambda s: float(_bracket(H, 1.0, s)) ** 2, 0.0, 1.0, epsrel=1e-11, limit=400, points=[1e-6, 1e-3])
    return 1.0 / math.sqrt(val)


def kernel_value(H: float, t: float, s: float, C_H: Optional[float] = None) -> float:
    """``K_H(t, s)`` with the inner integral by adaptive algebraic-weight quadrature.

    ``s >= t`` gives 0; ``s <= 0`` is rejected.
    """
    a = _check_h(H)
    if s <= 0:
        raise ValueError("kernel needs s > 0")
    c = calibrated_constant(H) if C_H is None else C_H
    if s >= t:
        return 0.0
    if a == 0.0:
        return c
    return c * ((t / s) ** a * (t - s) ** a - a * s ** (-a) * _inner_quad(H, t, s))


# -- grid operator -------------------------------------------------------------------


@dataclass(frozen=True)
class KernelGrid:
    """Cell-averaged kernel ``K[i, j] = mean of K(t_i, .) over [t_j, t_j+1]`` for ``j < i``."""

    H: float
    grid: TimeGrid
    K: np.ndarray
    C_H: float

    @classmethod
    def build(cls, H: float, grid: TimeGrid, n_gauss: int = 8, C_H: Optional[float] = None) -> "KernelGrid":
        _check_h(H)
        c = calibrated_constant(H) if C_H is None else C_H
        N, dt = grid.N, grid.dt
        x, w = np.polynomial.legendre.leggauss(n_gauss)
        x, w = 0.5 * (x + 1.0), 0.5 * w
        t = grid.times
        K = np.zeros((N + 1, N))
        j = np.arange(N)
        for i in range(1, N + 1):
            s = (j[:i, None] + x[None, :]) * dt
            K[i, :i] = c * (_bracket(H, t[i], s) @ w)
        return cls(H, grid, K, c)

    def to_csv(self, file) -> None:
        t = self.grid.times
        mid = (np.arange(self.grid.N) + 0.5) * self.grid.dt
        lines = ["t,s,K"]
        for i in range(1, self.grid.N + 1):
            for j in range(i):
                lines.append(f"{format_number(t[i])},{format_number(mid[j])},{format_number(self.K[i, j])}")
        text = "\n".join(lines) + "\n"
        if hasattr(file, "write"):
            file.write(text)
        else:
            with open(file, "w", newline="") as fh:
                fh.write(text)


def _kgrid(H, grid, kg):
    if kg is not None:
        if kg.H != H or kg.grid != grid:
            raise ValueError("kernel grid does not match H and grid")
        return kg
    return KernelGrid.build(H, grid)


def apply_K(h_values: np.ndarray, grid: TimeGrid, H: float, kgrid: Optional[KernelGrid] = None) -> np.ndarray:
    """``\\int_0^{t_i} K(t_i, s) h(s) ds`` with ``h`` taken at cell midpoints (node average)."""
    h = np.asarray(h_values, float)
    kg = _kgrid(H, grid, kgrid)
    mid = 0.5 * (h[..., 1:] + h[..., :-1])
    return mid @ kg.K.T * grid.dt


def kernel_fbm(H: float, grid: TimeGrid, seed, n_paths: Optional[int] = None, kgrid: Optional[KernelGrid] = None, return_driver: bool = False):
    """``\\int_0^t K(t, s) dB_s`` on the grid, optionally with the driving Brownian path."""
    kg = _kgrid(H, grid, kgrid)
    b = brownian_values(grid, _rng(seed), 1 if n_paths is None else n_paths)
    x = np.diff(b, axis=1) @ kg.K.T
    if n_paths is None:
        x, b = x[0], b[0]
    return (Path(grid, x), Path(grid, b)) if return_driver else Path(grid, x)


# -- fractional derivative ------------------------------------------------------------


def holder_exponent(f: np.ndarray, grid: TimeGrid) -> float:
    """Finite-difference estimate of the Hölder exponent from dyadic lags."""
    f = np.asarray(f, float)
    lags, osc = [], []
    k = 1
    while k <= grid.N // 4:
        o = float(np.max(np.abs(f[k:] - f[:-k])))
        if o > 0:
            lags.append(k * grid.dt)
            osc.append(o)
        k *= 2
    if len(lags) < 2:
        return math.inf
    return float(np.polyfit(np.log(lags[:4]), np.log(osc[:4]), 1)[0])


def fractional_derivative(f_values: np.ndarray, grid: TimeGrid, H: float, check: bool = True) -> np.ndarray:
    """Left Marchaud derivative of order ``H - 1/2`` by product integration on the grid."""
    a = _check_h(H)
    f = np.asarray(f_values, float)
    if check:
        if f[0] != 0.0:
            warnings.warn("fractional derivative expects f(0) = 0", RuntimeWarning, stacklevel=2)
        hx = holder_exponent(f, grid)
        if hx <= a:
            warnings.warn(f"samples look only {hx:.3g}-Hölder, not better than order {a:.3g}", RuntimeWarning, stacklevel=2)
    return _accel.marchaud(f, grid.dt, a)


# -- inverse operator ------------------------------------------------------------------


def inverse_K(g_values: Optional[np.ndarray], grid: TimeGrid, H: float, variant: str = "standard", C_H: Optional[float] = None, g_prime: Optional[np.ndarray] = None) -> np.ndarray:
    """``K^-1 g`` at grid nodes (node 0 set to the limit when finite, else ``nan``).

    ``variant="half-power"`` uses the weight ``r^(1/2)`` in place of ``r^(-a)`` and
    drops the constant; it is kept only to document that it fails the round trip.
    The value of ``g'(0)`` is split off and handled in closed form so the
    remainder vanishes at 0.
    """
    a = _check_h(H)
    c = calibrated_constant(H) if C_H is None else C_H
    t = grid.times
    gp = np.gradient(np.asarray(g_values, float), grid.dt, edge_order=2) if g_prime is None else np.asarray(g_prime, float)
    out = np.empty_like(t)
    if variant == "half-power":
        f = np.sqrt(t) * gp
        out[1:] = t[1:] ** a * _accel.marchaud(f, grid.dt, a)[1:]
        out[0] = 0.0
        return out
    if variant != "standard":
        raise ValueError("variant must be 'standard' or 'half-power'")
    if a == 0.0:
        return gp / c
    m0 = gp[0]
    f = np.zeros_like(t)
    f[1:] = t[1:] ** (-a) * (gp[1:] - m0)
    d = _accel.marchaud(f, grid.dt, a)
    d[1:] += m0 * _power_rl(a) * t[1:] ** (-2 * a)
    out[1:] = t[1:] ** a * d[1:] / (c * math.gamma(1 + a))
    out[0] = 0.0 if m0 == 0.0 else math.nan
    return out


def _power_rl(a: float) -> float:
    """Coefficient in ``D^a u^-a = Gamma(1-a)/Gamma(1-2a) u^-2a``."""
    return math.gamma(1 - a) / math.gamma(1 - 2 * a)


def constant_drift_integrand(H: float, mu: float, C_H: Optional[float] = None) -> float:
    """``kappa`` with ``K^-1(mu t)(s) = kappa s^-a``."""
    a = _check_h(H)
    c = calibrated_constant(H) if C_H is None else C_H
    if a == 0.0:
        return mu / c
    return mu * _power_rl(a) / (c * math.gamma(1 + a))


# -- Girsanov density --------------------------------------------------------------------


@dataclass
class DensityPath:
    grid: TimeGrid
    Lam: np.ndarray  # (n, N+1), Lam[:, 0] == 1
    a: np.ndarray  # (n, N) cell values of the integrand

    def to_csv(self, file, path: int = 0) -> None:
        t = self.grid.times
        lam = np.atleast_2d(self.Lam)[path]
        a = np.atleast_2d(self.a)[path]
        lines = ["t,Lambda,a"]
        for i in range(t.size):
            ai = format_number(a[i]) if i < a.size else "nan"
            lines.append(f"{format_number(t[i])},{format_number(lam[i])},{ai}")
        text = "\n".join(lines) + "\n"
        if hasattr(file, "write"):
            file.write(text)
        else:
            with open(file, "w", newline="") as fh:
                fh.write(text)


def _cell_average_power(grid: TimeGrid, p: float) -> np.ndarray:
    """Average of ``s^p`` over each cell (``p > -1``)."""
    t = grid.times
    return (t[1:] ** (p + 1) - t[:-1] ** (p + 1)) / ((p + 1) * grid.dt)


def girsanov_integrand(mu: Union[float, np.ndarray, MuSpec], grid: TimeGrid, H: float, driver: Optional[np.ndarray] = None, C_H: Optional[float] = None) -> np.ndarray:
    """Cell values ``a_j`` of ``K^-1(\\int_0^. mu)`` (shape ``(n, N)`` or ``(N,)``).

    A constant ``mu`` is handled in closed form with exact cell averages of
    ``s^-a``; a drift path uses the fractional-derivative inverse.
    """
    a = _check_h(H)
    if isinstance(mu, MuSpec):
        if mu.kind == "constant":
            mu = mu.value
        else:
            if driver is None:
                raise ValueError("a path-dependent drift needs the driving path")
            mu = mu.values(driver)
    if np.ndim(mu) == 0:
        kappa = constant_drift_integrand(H, float(mu), C_H)
        return kappa * _cell_average_power(grid, -a)
    mu = np.atleast_2d(np.asarray(mu, float))
    if not np.all(np.isfinite(mu)):
        raise ValueError("drift path is not finite")
    out = np.empty((mu.shape[0], grid.N))
    for p in range(mu.shape[0]):
        # g' = mu, so pass it directly instead of differencing its integral
        node = inverse_K(None, grid, H, C_H=C_H, g_prime=mu[p])
        kappa0 = constant_drift_integrand(H, mu[p, 0], C_H)
        sing = kappa0 * _cell_average_power(grid, -a)
        rest = node.copy()
        rest[1:] -= kappa0 * grid.times[1:] ** (-a)
        rest[0] = 0.0
        # left node keeps the integrand predictable
        out[p] = sing + rest[:-1]
    return out


def girsanov_density(mu, B: Union[Path, np.ndarray], H: float, grid: Optional[TimeGrid] = None, C_H: Optional[float] = None) -> DensityPath:
    """``Lambda_t = exp(-sum a_j dB_j - 1/2 sum a_j^2 dt)`` along each path.

    The integrand is evaluated per cell before the increment it multiplies, so
    ``E[Lambda_t] = 1`` holds exactly for the discrete product.
    """
    if isinstance(B, Path):
        grid = B.grid
        b = B.batch()
    else:
        b = np.atleast_2d(np.asarray(B, float))
    if grid is None:
        raise ValueError("a grid is required")
    a = np.broadcast_to(girsanov_integrand(mu, grid, H, b, C_H), (b.shape[0], grid.N))
    db = np.diff(b, axis=1)
    expo = np.zeros_like(b)
    np.cumsum(-a * db - 0.5 * a * a * grid.dt, axis=1, out=expo[:, 1:])
    lam = np.exp(expo)
    if np.all(a == 0):
        lam = np.ones_like(b)
    return DensityPath(grid, lam, np.array(a))


def weighted_mean_se(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Self-normalized weighted mean and its delta-method standard error."""
    w = np.asarray(weights, float)
    v = np.asarray(values, float)
    sw = w.sum()
    m = float((w * v).sum() / sw)
    se = float(math.sqrt(((w * (v - m)) ** 2).sum()) / sw)
    return m, se
