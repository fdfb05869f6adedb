"""Projection of simple strategies onto the Cheridito class, and CC delta hedging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from ._io import dumps as _json_dumps, rows_to_csv
from .procgen import Path, TimeGrid, _rng, brownian_values
from .strategy import Context, SimpleStrategy, position_matrix, stop_matrix

# -- projection ----------------------------------------------------------------------


@dataclass
class PathwiseStrategy:
    """A simple strategy written out per path.

    ``stops[p, :n_stops[p]]`` are grid indices; ``positions[p, j]`` is held over
    ``(stops[p, j], stops[p, j+1]]``.  Padding repeats the last stop with
    position 0.
    """

    grid: TimeGrid
    stops: np.ndarray
    positions: np.ndarray
    n_stops: np.ndarray
    h: float = 0.0

    def gains(self, x: np.ndarray) -> np.ndarray:
        xs = np.take_along_axis(np.atleast_2d(x), self.stops, axis=1)
        return (self.positions * np.diff(xs, axis=1)).sum(axis=1)

    def holdings(self) -> np.ndarray:
        """Position held over each grid cell ``(t_i, t_{i+1}]``, shape ``(n, N)``."""
        n, m = self.stops.shape
        out = np.zeros((n, self.grid.N))
        for j in range(m - 1):
            a, b, g = self.stops[:, j], self.stops[:, j + 1], self.positions[:, j]
            cells = np.arange(self.grid.N)
            mask = (cells[None, :] >= a[:, None]) & (cells[None, :] < b[:, None])
            out += mask * g[:, None]
        return out

    def spacing_ok(self, h: Optional[float] = None) -> np.ndarray:
        h = self.h if h is None else h
        k = self.grid.steps_for(h)
        gaps = np.diff(self.stops, axis=1)
        real = np.arange(self.stops.shape[1] - 1)[None, :] < (self.n_stops[:, None] - 1)
        return np.all(~real | (gaps >= k), axis=1)

    @classmethod
    def from_strategy(cls, strategy: SimpleStrategy, ctx: Context) -> "PathwiseStrategy":
        stops = stop_matrix(strategy, ctx)
        pos = position_matrix(strategy, ctx, stops)
        return cls(ctx.grid, stops, pos, np.full(ctx.n, stops.shape[1]), strategy.h)


@dataclass
class ProjectionResult:
    projected: PathwiseStrategy
    violating: np.ndarray  # bool per path
    nu: np.ndarray  # first violating leg (1-based), 0 when none

    @property
    def p(self) -> float:
        return float(self.violating.mean())


def _canonical(stops: np.ndarray, pos: np.ndarray) -> tuple[list[int], list[float]]:
    """Change points of the holdings process: empty intervals dropped, equal neighbours merged,
    leading and trailing flat (zero) stretches removed."""
    s_out, g_out = [], []
    for j in range(pos.size):
        a, b, g = int(stops[j]), int(stops[j + 1]), float(pos[j])
        if b == a:
            continue
        if g_out and g_out[-1] == g and s_out[-1] == a:
            s_out[-1] = b
            continue
        if g_out and s_out[-1] != a:
            # gap of flat holding between two legs
            g_out.append(0.0)
            s_out.append(a)
        if not g_out:
            s_out.append(a)
        g_out.append(g)
        s_out.append(b)
    while g_out and g_out[-1] == 0.0:
        g_out.pop()
        s_out.pop()
    while g_out and g_out[0] == 0.0:
        g_out.pop(0)
        s_out.pop(0)
    # re-merge neighbours that became equal after trimming
    cs, cg = s_out[:1], []
    for j, g in enumerate(g_out):
        if cg and cg[-1] == g:
            cs[-1] = s_out[j + 1]
        else:
            cg.append(g)
            cs.append(s_out[j + 1])
    return cs, cg


def project_to_cc(strategy: SimpleStrategy, delta0: float, paths, grid: Optional[TimeGrid] = None) -> ProjectionResult:
    """Freeze positions from the first spacing violation onward.

    Each path's strategy is first reduced to the change points of its holdings
    (empty intervals dropped, equal consecutive positions merged), so only real
    trades count.  With ``nu`` the first trade whose successor comes less than
    ``delta0`` later, trades ``1..nu`` are kept and ``g_nu`` is held to the
    final exit.  If that exit is itself closer than ``delta0`` to ``tau_nu``,
    trade ``nu`` is dropped too and ``g_{nu-1}`` is held instead.  Paths
    without a violation keep the original holdings.
    """
    ctx = paths if isinstance(paths, Context) else Context(paths, grid)
    if delta0 < ctx.grid.dt * (1 - 1e-9):
        raise ValueError("delta0 must be at least the grid step")
    k = ctx.grid.steps_for(delta0)
    stops = stop_matrix(strategy, ctx)
    pos = position_matrix(strategy, ctx, stops)
    n, m = stops.shape
    exit_idx = stops[:, -1]
    out_s = np.repeat(exit_idx[:, None], m, axis=1)
    out_g = np.zeros((n, m - 1))
    n_stops = np.ones(n, dtype=np.int64)
    violating = np.zeros(n, dtype=bool)
    nu = np.zeros(n, dtype=np.int64)
    for p in range(n):
        cs, cg = _canonical(stops[p], pos[p])
        if not cg:
            continue
        gaps = np.diff(cs)
        bad = np.nonzero(gaps < k)[0]
        if bad.size:
            v = int(bad[0]) + 1
            violating[p], nu[p] = True, v
            last = exit_idx[p]
            keep = v if last - cs[v - 1] >= k else v - 1
            cs = cs[:keep] + [int(last)] if keep else []
            cg = cg[:keep]
        if not cg:
            continue
        out_s[p, : len(cs)] = cs
        out_g[p, : len(cg)] = cg
        n_stops[p] = len(cs)
    return ProjectionResult(PathwiseStrategy(ctx.grid, out_s, out_g, n_stops, delta0), violating, nu)


# -- payoffs and models --------------------------------------------------------------

_LIPSCHITZ = ("linear", "call", "put", "clipped_square")


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff ``g(S_T)``; only Lipschitz kinds are accepted."""

    kind: str
    K: float = 0.0
    cap: float = 1.0

    def __post_init__(self):
        if self.kind not in _LIPSCHITZ:
            raise ValueError(f"payoff {self.kind!r} is not in the Lipschitz class {_LIPSCHITZ}")
        if self.kind == "clipped_square" and not self.cap > 0:
            raise ValueError("clipped_square needs cap > 0")

    def __call__(self, x):
        x = np.asarray(x, float)
        if self.kind == "linear":
            return x.copy()
        if self.kind == "call":
            return np.maximum(x - self.K, 0.0)
        if self.kind == "put":
            return np.maximum(self.K - x, 0.0)
        return np.minimum(x * x, self.cap)

    def derivative(self, x):
        x = np.asarray(x, float)
        if self.kind == "linear":
            return np.ones_like(x)
        if self.kind == "call":
            return (x > self.K).astype(float)
        if self.kind == "put":
            return -(x < self.K).astype(float)
        return np.where(x * x < self.cap, 2 * x, 0.0)

    def describe(self) -> str:
        if self.kind in ("call", "put"):
            return f"{self.kind}(K={self.K:g})"
        if self.kind == "clipped_square":
            return f"min(x^2,{self.cap:g})"
        return "linear"


@dataclass(frozen=True)
class Model:
    """``brownian``: ``S = S0 + sigma B``.  ``geometric``: ``S = S0 exp(sigma B - sigma^2 t / 2)``."""

    kind: str = "brownian"
    sigma: float = 1.0
    S0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("brownian", "geometric"):
            raise ValueError("model must be 'brownian' or 'geometric' (fBm models are not hedged)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kind == "geometric" and not self.S0 > 0:
            raise ValueError("geometric model needs S0 > 0")

    def prices(self, b: np.ndarray, grid: TimeGrid) -> np.ndarray:
        if self.kind == "brownian":
            return self.S0 + self.sigma * b
        return self.S0 * np.exp(self.sigma * b - 0.5 * self.sigma**2 * grid.times)

    def value_delta(self, payoff: Payoff, x: np.ndarray, tau: float):
        """Price and delta of ``payoff`` with time ``tau`` to expiry, at spot ``x``."""
        x = np.asarray(x, float)
        if tau <= 0:
            return payoff(x), payoff.derivative(x)
        sd = self.sigma * math.sqrt(tau)
        if payoff.kind == "linear":
            return x.copy(), np.ones_like(x)
        if self.kind == "brownian" and payoff.kind in ("call", "put"):
            d = (x - payoff.K) / sd
            call = (x - payoff.K) * stats.norm.cdf(d) + sd * stats.norm.pdf(d)
            if payoff.kind == "call":
                return call, stats.norm.cdf(d)
            return call - (x - payoff.K), stats.norm.cdf(d) - 1.0
        if self.kind == "geometric" and payoff.kind in ("call", "put"):
            with np.errstate(divide="ignore"):
                d1 = (np.log(x / payoff.K) + 0.5 * sd * sd) / sd if payoff.K > 0 else np.full_like(x, np.inf)
            d2 = d1 - sd
            call = x * stats.norm.cdf(d1) - payoff.K * stats.norm.cdf(d2)
            if payoff.kind == "call":
                return call, stats.norm.cdf(d1)
            return call - (x - payoff.K), stats.norm.cdf(d1) - 1.0
        # clipped square min(y^2, c): integrate y^2 below the clip level r = sqrt(c) in closed form
        r = math.sqrt(payoff.cap)
        if self.kind == "brownian":
            lo, hi = (-r - x) / sd, (r - x) / sd
            mass = stats.norm.cdf(hi) - stats.norm.cdf(lo)
            pl, ph = stats.norm.pdf(lo), stats.norm.pdf(hi)
            inner = x * x * mass + 2 * x * sd * (pl - ph) + sd * sd * (mass + lo * pl - hi * ph)
            return inner + payoff.cap * (1 - mass), 2 * x * mass + 2 * sd * (pl - ph)
        b = (np.log(r / x) + 0.5 * sd * sd) / sd
        below = np.exp(sd * sd) * stats.norm.cdf(b - 2 * sd)
        return x * x * below + payoff.cap * stats.norm.sf(b), 2 * x * below


# -- hedging ---------------------------------------------------------------------------


@dataclass
class HedgeReport:
    h: float
    payoff: str
    model: str
    errors: np.ndarray
    rms: float
    quantiles: dict
    h2: float
    n_rebalances: int

    def summary(self) -> dict:
        return {"h": self.h, "payoff": self.payoff, "model": self.model, "rms": self.rms,
                "h2": self.h2, "n_rebalances": self.n_rebalances, "quantiles": self.quantiles}

    def to_json(self) -> str:
        return _json_dumps(self.summary())

    def to_csv_row(self) -> dict:
        row = {"h": self.h, "rms": self.rms, "h2": self.h2}
        row.update({f"q{int(k * 100):02d}": v for k, v in self.quantiles.items()})
        return row


def reports_to_csv(reports) -> str:
    rows = [r.to_csv_row() for r in reports]
    return rows_to_csv(rows, list(rows[0]))


def rebalance_indices(grid: TimeGrid, h: float) -> np.ndarray:
    """Trade indices ``0, k, 2k, ...`` with every gap, including the one to ``T``, at least ``k = ceil(h/dt)``."""
    if h < grid.dt * (1 - 1e-9):
        raise ValueError("h must be at least the grid step")
    k = grid.steps_for(h)
    if k > grid.N:
        raise ValueError("h exceeds the horizon")
    idx = np.arange(0, grid.N - k + 1, k)
    return np.append(idx, grid.N)


def hedge_paths(payoff: Payoff, model: Model, S: np.ndarray, grid: TimeGrid, h: float):
    """Self-financing hedge on given price paths.

    Returns ``(error_T, price_process, portfolio_process)``; the error is
    ``g(S_T) - V_T``.
    """
    S = np.atleast_2d(np.asarray(S, float))
    stops = rebalance_indices(grid, h)
    t = grid.times
    price = np.empty_like(S)
    for i in range(grid.N + 1):
        price[:, i] = model.value_delta(payoff, S[:, i], grid.T - t[i])[0]
    delta_cells = np.empty((S.shape[0], grid.N))
    for a, b in zip(stops[:-1], stops[1:]):
        _, d = model.value_delta(payoff, S[:, a], grid.T - t[a])
        delta_cells[:, a:b] = d[:, None]
    V = np.empty_like(S)
    V[:, 0] = price[:, 0]
    np.cumsum(delta_cells * np.diff(S, axis=1), axis=1, out=V[:, 1:])
    V[:, 1:] += price[:, :1]
    err = payoff(S[:, -1]) - V[:, -1]
    return err, price, V


def cc_rebalance_hedge(payoff: Payoff, model: Model, h: float, grid: TimeGrid, n_paths: int, seed: int) -> HedgeReport:
    b = brownian_values(grid, _rng(seed), n_paths)
    S = model.prices(b, grid)
    err, price, V = hedge_paths(payoff, model, S, grid, h)
    qs = (0.01, 0.05, 0.5, 0.95, 0.99)
    return HedgeReport(
        h, payoff.describe(), model.kind, err, float(np.sqrt(np.mean(err**2))),
        {q: float(np.quantile(err, q)) for q in qs}, h2_distance(price, V, grid),
        len(rebalance_indices(grid, h)) - 1,
    )


def h2_distance(X, Y, grid: Optional[TimeGrid] = None) -> float:
    """``sqrt(mean_p [D_p - m]_T + TV(m)^2)`` with ``D = X - Y`` and ``m`` the cross-path mean of ``D``."""
    x = X.batch() if isinstance(X, Path) else np.atleast_2d(np.asarray(X, float))
    y = Y.batch() if isinstance(Y, Path) else np.atleast_2d(np.asarray(Y, float))
    if isinstance(X, Path) and isinstance(Y, Path) and X.grid != Y.grid:
        raise ValueError("grids differ")
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    d = x - y
    m = d.mean(axis=0)
    qv = (np.diff(d - m, axis=1) ** 2).sum(axis=1).mean()
    tv = np.abs(np.diff(m)).sum()
    return float(math.sqrt(qv + tv * tv))

