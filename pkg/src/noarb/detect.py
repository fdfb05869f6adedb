"""Monte-Carlo falsification of no-arbitrage: sign tests, reachability, strategy search.

"Positive probability" is read as a strictly positive one-sided
Clopper-Pearson lower bound.  Samples are drawn in chunks with independent
child seeds and only counts (and running moments) are merged, so memory stays
flat in ``n``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _accel
from ._io import dumps as _json_dumps, rows_to_csv
from .procgen import DEFAULT_CHUNK, ProcessSpec, TimeGrid, simulate_chunks
from .strategy import (
    ALWAYS,
    Context,
    Deterministic,
    EventSpec,
    HittingLevel,
    Leg,
    OffsetAfter,
    SimpleStrategy,
    StoppingRule,
    Const,
    Truncate,
    gains,
    rule_bound,
)

BOTH = "BothSigns"
NONNEG = "NonnegNontrivial"
NONPOS = "NonposNontrivial"
NULL = "Null"
INCONCLUSIVE = "Inconclusive"

MIN_CONDITIONED = 20


class NoConditioningError(ValueError):
    """The conditioning event did not occur on any sampled path."""


def cp_lower(k: int, n: int, conf: float = 0.999) -> float:
    """One-sided Clopper-Pearson lower bound for a binomial proportion."""
    if n <= 0:
        raise ValueError("need n > 0")
    if k <= 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - conf, k, n - k + 1))


def cp_upper(k: int, n: int, conf: float = 0.999) -> float:
    if k >= n:
        return 1.0
    return float(stats.beta.ppf(conf, k + 1, n - k))


@dataclass
class Verdict:
    classification: str
    n_pos: int
    n_neg: int
    n_zero: int
    conf: float
    lb_pos: float
    lb_neg: float
    lb_zero: float
    zero_tol: float
    n_total: int = 0  # paths drawn before conditioning

    @property
    def n(self) -> int:
        return self.n_pos + self.n_neg + self.n_zero

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SignCounts:
    n_pos: int = 0
    n_neg: int = 0
    n_zero: int = 0
    n_total: int = 0

    def add(self, inc: np.ndarray, tol: float, n_total: int) -> None:
        self.n_pos += int(np.count_nonzero(inc > tol))
        self.n_neg += int(np.count_nonzero(inc < -tol))
        self.n_zero += int(np.count_nonzero(np.abs(inc) <= tol))
        self.n_total += n_total

    def merge(self, other: "SignCounts") -> "SignCounts":
        return SignCounts(self.n_pos + other.n_pos, self.n_neg + other.n_neg,
                          self.n_zero + other.n_zero, self.n_total + other.n_total)


def classify(counts: SignCounts, conf: float = 0.999, zero_tol: float = 0.0, min_n: int = MIN_CONDITIONED) -> Verdict:
    n = counts.n_pos + counts.n_neg + counts.n_zero
    if n == 0:
        raise NoConditioningError("conditioning event never occurred in the sample")
    lbp, lbn, lbz = (cp_lower(k, n, conf) for k in (counts.n_pos, counts.n_neg, counts.n_zero))
    if counts.n_zero == n:
        cls = NULL
    elif n < min_n:
        cls = INCONCLUSIVE
    elif lbp > 0 and lbn > 0:
        cls = BOTH
    elif counts.n_neg == 0 and lbp > 0:
        cls = NONNEG
    elif counts.n_pos == 0 and lbn > 0:
        cls = NONPOS
    else:
        cls = INCONCLUSIVE
    return Verdict(cls, counts.n_pos, counts.n_neg, counts.n_zero, conf, lbp, lbn, lbz, zero_tol, counts.n_total)


def classify_increments(inc: np.ndarray, conf: float = 0.999, zero_tol: Optional[float] = None) -> Verdict:
    inc = np.asarray(inc, float).ravel()
    tol = _default_tol(inc) if zero_tol is None else zero_tol
    c = SignCounts()
    c.add(inc, tol, inc.size)
    return classify(c, conf, tol)


def _default_tol(x: np.ndarray) -> float:
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    return 1e-12 * (scale if scale > 0 else 1.0)


def _chunk_context(spec, grid, n, seed, chunk):
    for arrays in simulate_chunks(spec, grid, n, seed, chunk):
        yield Context(arrays, grid)


def increment_sign_test(
    spec: ProcessSpec,
    tau0: StoppingRule,
    tau1: StoppingRule,
    A: EventSpec = ALWAYS,
    n: int = 10_000,
    conf: float = 0.999,
    zero_tol: Optional[float] = None,
    *,
    grid: TimeGrid,
    seed: int,
    chunk: int = DEFAULT_CHUNK,
    source: str = "X",
) -> Verdict:
    """Sign pattern of ``X_tau1 - X_tau0`` on the event ``A``.

    ``zero_tol`` defaults to ``1e-12`` times the largest ``|X|`` seen in the
    first chunk.
    """
    if n < 100:
        raise ValueError("increment_sign_test needs n >= 100")
    counts = SignCounts()
    tol = zero_tol
    for ctx in _chunk_context(spec, grid, n, seed, chunk):
        x = ctx.source(source)
        if tol is None:
            tol = _default_tol(x)
        i0, i1 = ctx.stop(tau0), ctx.stop(tau1)
        if np.any(i1 < i0):
            raise ValueError("tau1 < tau0 on some path")
        on = ctx.event(A)
        rows = np.nonzero(on)[0]
        inc = x[rows, i1[rows]] - x[rows, i0[rows]]
        counts.add(inc, tol, ctx.n)
    return classify(counts, conf, tol)


# -- reachability ----------------------------------------------------------------


@dataclass
class ReachabilityReport:
    C: float
    h: float
    T: float
    nu: float
    conf: float
    n: int
    n_cond: int
    freq_A: float
    n_up: int
    n_down: int
    p_up: float
    p_down: float
    lb_up: float
    lb_down: float
    n_sup_below: int
    n_inf_above: int
    p_sup_below: float
    p_inf_above: float
    lb_sup_below: float
    lb_inf_above: float

    def se(self, p: float) -> float:
        return math.sqrt(max(p * (1 - p), 0.0) / self.n_cond)

    def to_dict(self) -> dict:
        return asdict(self)


def reachability_test(
    spec: ProcessSpec,
    h: float,
    T: float,
    C: float,
    tau: StoppingRule = Deterministic(0.0),
    A: EventSpec = ALWAYS,
    n: int = 10_000,
    *,
    grid: TimeGrid,
    seed: int,
    nu: Optional[float] = None,
    conf: float = 0.999,
    chunk: int = DEFAULT_CHUNK,
    source: str = "X",
) -> ReachabilityReport:
    """Tails of ``X_{tau+nu} - X_tau`` and of its sup/inf over ``nu in [h, T]``, on ``A``.

    The point increment uses ``nu`` (default ``h``).  The window events are
    ``sup < -C`` and ``inf > C``.
    """
    if not (0 < h < T):
        raise ValueError("need 0 < h < T")
    if not C > 0:
        raise ValueError("need C > 0")
    nu = h if nu is None else nu
    if not (h <= nu <= T):
        raise ValueError("nu must lie in [h, T]")
    if rule_bound(tau) + T > grid.T + 1e-12:
        raise ValueError(f"grid horizon {grid.T} does not cover the stop bound plus T={T}")
    lo, hi = grid.steps_for(h), int(math.floor(T / grid.dt + 1e-9))
    k_nu = grid.steps_for(nu)
    n_cond = n_up = n_down = n_sb = n_ia = 0
    for ctx in _chunk_context(spec, grid, n, seed, chunk):
        x = ctx.source(source)
        on = ctx.event(A)
        rows = np.nonzero(on)[0]
        if rows.size == 0:
            continue
        xa = x[rows]
        anchor = ctx.stop(tau)[rows]
        base = xa[np.arange(rows.size), anchor]
        d = xa[np.arange(rows.size), np.minimum(anchor + k_nu, grid.N)] - base
        vmax, vmin = _accel.window_extrema(xa, anchor, lo, hi)
        n_cond += rows.size
        n_up += int(np.count_nonzero(d > C))
        n_down += int(np.count_nonzero(d < -C))
        n_sb += int(np.count_nonzero(vmax < -C))
        n_ia += int(np.count_nonzero(vmin > C))
    if n_cond == 0:
        raise NoConditioningError("conditioning event never occurred in the sample")
    f = lambda k: k / n_cond
    lb = lambda k: cp_lower(k, n_cond, conf)
    return ReachabilityReport(
        C, h, T, nu, conf, n, n_cond, n_cond / n,
        n_up, n_down, f(n_up), f(n_down), lb(n_up), lb(n_down),
        n_sb, n_ia, f(n_sb), f(n_ia), lb(n_sb), lb(n_ia),
    )


def chaining_lower_bound(h: float, T: float, C: float) -> float:
    """Closed-form lower bound ``P(B_h < -2C) P(sup_{[0, T-h]} B < C)`` for Brownian motion."""
    return float(stats.norm.cdf(-2 * C / math.sqrt(h)) * (2 * stats.norm.cdf(C / math.sqrt(T - h)) - 1))


# -- strategy search -----------------------------------------------------------------


@dataclass
class CandidateResult:
    candidate: str
    n: int
    n_pos: int
    n_neg: int
    n_zero: int
    n_below_eps: int
    lb_pos: float
    lb_neg: float
    mean: float
    sd: float
    mean_lcb: float
    frac_ok: float
    cls: str
    flagged: bool

    def row(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        return d


@dataclass
class SearchResult:
    best: CandidateResult
    candidates: list[CandidateResult]
    h: float
    eps: float
    conf: float

    @property
    def flagged(self) -> list[CandidateResult]:
        return [c for c in self.candidates if c.flagged]

    @property
    def arbitrage_found(self) -> bool:
        return bool(self.flagged)

    def to_csv(self) -> str:
        cols = ["candidate", "n_pos", "n_neg", "n_zero", "lb_pos", "lb_neg", "class", "mean", "mean_lcb", "flagged"]
        return rows_to_csv([c.row() for c in self.candidates], cols)

    def to_json(self) -> str:
        return _json_dumps(
            {"h": self.h, "eps": self.eps, "conf": self.conf, "best": self.best.candidate,
             "arbitrage_found": self.arbitrage_found, "candidates": [c.row() for c in self.candidates]}
        )


def interval_family(
    grid: TimeGrid,
    h: float,
    lengths: Sequence[float],
    signs: Sequence[float] = (1.0, -1.0),
    levels: Sequence[float] = (),
    start_bound: Optional[float] = None,
) -> list[tuple[str, SimpleStrategy]]:
    """``+-1_(0, t]`` for each length ``t >= h``, plus ``+-1_(tau, tau + t]`` for hitting times of ``levels``.

    Hitting times are truncated so the exit stays on the grid.
    """
    out = []
    for t in lengths:
        if t < h - 1e-12:
            continue
        for s in signs:
            strat = SimpleStrategy((Leg(Deterministic(0.0), Const(s)),), Deterministic(t), h)
            out.append((f"{s:+g}*1(0,{t:g}]", strat))
        for lvl in levels:
            bound = grid.T - t if start_bound is None else min(start_bound, grid.T - t)
            if bound < 0:
                continue
            tau = Truncate(HittingLevel(lvl, "up" if lvl >= 0 else "down"), bound)
            for s in signs:
                strat = SimpleStrategy((Leg(tau, Const(s)),), OffsetAfter(tau, t), h)
                out.append((f"{s:+g}*1(hit{lvl:g},+{t:g}]", strat))
    return out


@dataclass
class _Moments:
    n: int = 0
    s1: float = 0.0
    s2: float = 0.0
    n_pos: int = 0
    n_neg: int = 0
    n_zero: int = 0
    n_below: int = 0

    def add(self, g: np.ndarray, tol: float, eps: float) -> None:
        self.n += g.size
        self.s1 += float(g.sum())
        self.s2 += float((g * g).sum())
        self.n_pos += int(np.count_nonzero(g > tol))
        self.n_neg += int(np.count_nonzero(g < -tol))
        self.n_zero += int(np.count_nonzero(np.abs(g) <= tol))
        self.n_below += int(np.count_nonzero(g < -eps))


def arbitrage_search(
    spec: ProcessSpec,
    family: Sequence[tuple[str, SimpleStrategy]],
    h: float,
    n: int = 10_000,
    eps: float = 0.0,
    *,
    grid: TimeGrid,
    seed: int,
    conf: float = 0.999,
    zero_tol: Optional[float] = None,
    chunk: int = DEFAULT_CHUNK,
) -> SearchResult:
    """Evaluate every candidate on the same sample and rank them.

    Ranking key is (fraction of paths with gain >= -eps, mean gain).  A
    candidate is flagged when no sampled gain is below ``-eps`` and the
    one-sided normal lower confidence bound of the mean gain is positive.
    """
    if not family:
        raise ValueError("empty strategy family")
    if h <= 0:
        raise ValueError("search needs h > 0")
    family = [(name, s if s.h >= h else SimpleStrategy(s.legs, s.exit, h, s.g0)) for name, s in family]
    acc = [_Moments() for _ in family]
    tol = zero_tol
    for ctx in _chunk_context(spec, grid, n, seed, chunk):
        if tol is None:
            tol = _default_tol(ctx.source("X"))
        for m, (_, strat) in zip(acc, family):
            m.add(gains(strat, ctx).total, tol, eps)
    z = float(stats.norm.ppf(conf))
    results = []
    for (name, _), m in zip(family, acc):
        mean = m.s1 / m.n
        var = max(m.s2 / m.n - mean * mean, 0.0) * m.n / max(m.n - 1, 1)
        sd = math.sqrt(var)
        lcb = mean - z * sd / math.sqrt(m.n)
        v = classify(SignCounts(m.n_pos, m.n_neg, m.n_zero, m.n), conf, tol)
        flagged = m.n_below == 0 and lcb > 0
        results.append(
            CandidateResult(name, m.n, m.n_pos, m.n_neg, m.n_zero, m.n_below, v.lb_pos, v.lb_neg,
                            mean, sd, lcb, 1.0 - m.n_below / m.n, v.classification, flagged)
        )
    best = max(results, key=lambda r: (r.frac_ok, r.mean))
    return SearchResult(best, results, h, eps, conf)


def verdicts_to_csv(named: Sequence[tuple[str, Verdict]]) -> str:
    rows = [
        {"candidate": name, "n_pos": v.n_pos, "n_neg": v.n_neg, "n_zero": v.n_zero,
         "lb_pos": v.lb_pos, "lb_neg": v.lb_neg, "class": v.classification}
        for name, v in named
    ]
    return rows_to_csv(rows, ["candidate", "n_pos", "n_neg", "n_zero", "lb_pos", "lb_neg", "class"])
