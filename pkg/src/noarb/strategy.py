"""Grid-adapted stopping rules, simple strategies and pathwise gains.

Stopping rules and position functionals are small expression trees.  Every
node only reads path values at indices up to the stop it is evaluated at, so
adaptedness is checked mechanically instead of assumed: a position that asks
for a value after its own trade time raises :class:`MeasurabilityError`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Mapping, Optional, Union

import numpy as np

from . import _accel
from .procgen import Path, TimeGrid


class MeasurabilityError(ValueError):
    """An expression reads information from after its evaluation time."""


class SpacingViolation(ValueError):
    def __init__(self, leg: int, path: int, gap: float, h: float):
        super().__init__(f"stops of leg {leg} and {leg + 1} are {gap:.6g} apart on path {path}, need >= {h}")
        self.leg = leg
        self.path = path


# -- stopping rules --------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    t: float


@dataclass(frozen=True)
class HittingLevel:
    """First grid time at or after ``start`` where ``source`` reaches ``level``."""

    level: float
    direction: str = "up"
    source: str = "X"
    start: float = 0.0

    def __post_init__(self):
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")


@dataclass(frozen=True)
class OffsetAfter:
    rule: "StoppingRule"
    offset: float

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")


@dataclass(frozen=True)
class Truncate:
    rule: "StoppingRule"
    bound: float


@dataclass(frozen=True)
class Gated:
    """``rule`` on the event, the constant time ``otherwise`` off it."""

    rule: "StoppingRule"
    event: "EventSpec"
    otherwise: float


StoppingRule = Union[Deterministic, HittingLevel, OffsetAfter, Truncate, Gated]


def rule_bound(rule: StoppingRule) -> float:
    """Deterministic upper bound of a rule (``inf`` when unbounded)."""
    if isinstance(rule, Deterministic):
        return rule.t
    if isinstance(rule, HittingLevel):
        return math.inf
    if isinstance(rule, OffsetAfter):
        return rule_bound(rule.rule) + rule.offset
    if isinstance(rule, Truncate):
        return min(rule.bound, rule_bound(rule.rule))
    if isinstance(rule, Gated):
        return max(rule_bound(rule.rule), rule.otherwise)
    raise TypeError(f"not a stopping rule: {rule!r}")


# -- expressions over the path prefix ---------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class ValueAt:
    """Value of ``source`` at stop ``at`` (default: the evaluation stop)."""

    source: str = "X"
    at: Optional[StoppingRule] = None


@dataclass(frozen=True)
class RunningMax:
    source: str = "X"


@dataclass(frozen=True)
class RunningMin:
    source: str = "X"


@dataclass(frozen=True)
class StopTime:
    at: Optional[StoppingRule] = None


@dataclass(frozen=True)
class BinOp:
    op: str
    a: "Expr"
    b: "Expr"

    def __post_init__(self):
        if self.op not in _BINOPS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Not:
    a: "Expr"


@dataclass(frozen=True)
class EventIndicator:
    event: "EventSpec"


Expr = Union[Const, ValueAt, RunningMax, RunningMin, StopTime, BinOp, Not, EventIndicator]

_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "<": lambda a, b: (a < b).astype(float),
    "<=": lambda a, b: (a <= b).astype(float),
    ">": lambda a, b: (a > b).astype(float),
    ">=": lambda a, b: (a >= b).astype(float),
    "and": lambda a, b: ((a != 0) & (b != 0)).astype(float),
    "or": lambda a, b: ((a != 0) | (b != 0)).astype(float),
    "min": np.minimum,
    "max": np.maximum,
}


@dataclass(frozen=True)
class EventSpec:
    """Predicate ``expr != 0`` evaluated on the prefix up to stop ``ref``."""

    expr: Expr
    ref: StoppingRule = field(default_factory=lambda: Deterministic(0.0))


ALWAYS = EventSpec(Const(1.0))
NEVER = EventSpec(Const(0.0))


# -- evaluation ------------------------------------------------------------


class Context:
    """Named path batches on one grid, with memoized stop indices."""

    def __init__(self, paths: Union[Path, np.ndarray, Mapping[str, np.ndarray]], grid: Optional[TimeGrid] = None):
        if isinstance(paths, Path):
            grid = paths.grid
            paths = {"X": paths.batch()}
        elif isinstance(paths, np.ndarray):
            paths = {"X": np.atleast_2d(paths)}
        else:
            paths = {k: (v.batch() if isinstance(v, Path) else np.atleast_2d(np.asarray(v, float))) for k, v in paths.items()}
            if grid is None:
                grid = next((v.grid for v in paths.values() if isinstance(v, Path)), None)
        if grid is None:
            raise ValueError("a grid is required")
        self.grid = grid
        self.paths = paths
        shapes = {v.shape for v in paths.values()}
        if len(shapes) != 1:
            raise ValueError(f"path batches disagree in shape: {shapes}")
        self.n, m = shapes.pop()
        if m != grid.N + 1:
            raise ValueError("paths do not match the grid")
        self._stops: dict[StoppingRule, np.ndarray] = {}
        self._running: dict[tuple[str, str], np.ndarray] = {}

    def source(self, name: str) -> np.ndarray:
        try:
            return self.paths[name]
        except KeyError:
            raise KeyError(f"dangling source path id {name!r}; available: {sorted(self.paths)}") from None

    def stop(self, rule: StoppingRule) -> np.ndarray:
        if rule not in self._stops:
            self._stops[rule] = self._eval_stop(rule)
        return self._stops[rule]

    def _eval_stop(self, rule) -> np.ndarray:
        g, n = self.grid, self.n
        if isinstance(rule, Deterministic):
            return np.full(n, g.index_of(rule.t), dtype=np.int64)
        if isinstance(rule, HittingLevel):
            start = np.full(n, g.index_of(rule.start), dtype=np.int64)
            return _accel.first_hit(self.source(rule.source), rule.level, rule.direction == "up", start, g.N)
        if isinstance(rule, OffsetAfter):
            return np.minimum(self.stop(rule.rule) + g.steps_for(rule.offset), g.N)
        if isinstance(rule, Truncate):
            b = g.index_of(rule.bound) if rule.bound < g.T else g.N
            if rule.bound < g.T and g.times[b] > rule.bound + 1e-12:
                b -= 1  # stay at or below the bound
            return np.minimum(self.stop(rule.rule), b)
        if isinstance(rule, Gated):
            inner = self.stop(rule.rule)
            ref = self.stop(rule.event.ref)
            if np.any(ref > inner):
                raise MeasurabilityError("gating event is decided after the gated stop")
            on = self.event(rule.event)
            return np.where(on, inner, g.index_of(rule.otherwise))
        raise TypeError(f"not a stopping rule: {rule!r}")

    def running(self, kind: str, source: str) -> np.ndarray:
        key = (kind, source)
        if key not in self._running:
            x = self.source(source)
            self._running[key] = np.maximum.accumulate(x, axis=1) if kind == "max" else np.minimum.accumulate(x, axis=1)
        return self._running[key]

    def expr(self, e: Expr, k: np.ndarray) -> np.ndarray:
        """Evaluate ``e`` at per-path stop indices ``k``."""
        rows = np.arange(self.n)
        if isinstance(e, Const):
            return np.full(self.n, float(e.value))
        if isinstance(e, ValueAt):
            at = k if e.at is None else self._checked(e.at, k)
            return self.source(e.source)[rows, at]
        if isinstance(e, RunningMax):
            return self.running("max", e.source)[rows, k]
        if isinstance(e, RunningMin):
            return self.running("min", e.source)[rows, k]
        if isinstance(e, StopTime):
            at = k if e.at is None else self._checked(e.at, k)
            return self.grid.times[at]
        if isinstance(e, BinOp):
            with np.errstate(divide="ignore", invalid="ignore"):
                return _BINOPS[e.op](self.expr(e.a, k), self.expr(e.b, k))
        if isinstance(e, Not):
            return (self.expr(e.a, k) == 0).astype(float)
        if isinstance(e, EventIndicator):
            self._checked(e.event.ref, k)
            return self.event(e.event).astype(float)
        raise TypeError(f"not an expression: {e!r}")

    def _checked(self, rule, k) -> np.ndarray:
        idx = self.stop(rule)
        if np.any(idx > k):
            raise MeasurabilityError(f"{rule!r} can occur after the evaluation stop")
        return idx

    def event(self, ev: EventSpec) -> np.ndarray:
        return self.expr(ev.expr, self.stop(ev.ref)) != 0


def evaluate_stop(rule: StoppingRule, path, grid: Optional[TimeGrid] = None):
    """Grid index of ``rule`` on each path (a plain ``int`` for a single 1-D path)."""
    ctx = path if isinstance(path, Context) else Context(path, grid)
    idx = ctx.stop(rule)
    single = isinstance(path, Path) and not path.is_batch
    return int(idx[0]) if single else idx


def evaluate_event(event: EventSpec, path, grid: Optional[TimeGrid] = None) -> np.ndarray:
    ctx = path if isinstance(path, Context) else Context(path, grid)
    return ctx.event(event)


# -- strategies -------------------------------------------------------------


@dataclass(frozen=True)
class Leg:
    stop: StoppingRule
    position: Expr = Const(1.0)


@dataclass(frozen=True)
class SimpleStrategy:
    """``g0 1_{0} + sum_j g_j 1_(tau_j, tau_{j+1}]``.

    ``legs`` hold ``(tau_j, g_j)`` for ``j = 1..n-1`` and ``exit`` is ``tau_n``.
    ``h > 0`` marks a Cheridito-class strategy.  ``g0`` never moves wealth.
    """

    legs: tuple[Leg, ...]
    exit: StoppingRule
    h: float = 0.0
    g0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "legs", tuple(self.legs))
        if not self.legs:
            raise ValueError("a strategy needs at least one leg")
        if self.h < 0:
            raise ValueError("spacing h must be nonnegative")

    @property
    def stops(self) -> list[StoppingRule]:
        return [leg.stop for leg in self.legs] + [self.exit]

    def scaled(self, c: float) -> "SimpleStrategy":
        legs = tuple(Leg(l.stop, BinOp("*", Const(c), l.position)) for l in self.legs)
        return SimpleStrategy(legs, self.exit, self.h, self.g0 * c)


def interval(t0: StoppingRule, t1: StoppingRule, position: Union[float, Expr] = 1.0, h: float = 0.0) -> SimpleStrategy:
    pos = position if not isinstance(position, (int, float)) else Const(float(position))
    return SimpleStrategy((Leg(t0, pos),), t1, h)


@dataclass
class GainsResult:
    total: np.ndarray
    per_leg: np.ndarray
    stops: np.ndarray
    positions: np.ndarray


def stop_matrix(strategy: SimpleStrategy, ctx: Context) -> np.ndarray:
    return np.stack([ctx.stop(r) for r in strategy.stops], axis=1)


def position_matrix(strategy: SimpleStrategy, ctx: Context, stops: np.ndarray) -> np.ndarray:
    return np.stack([ctx.expr(leg.position, stops[:, j]) for j, leg in enumerate(strategy.legs)], axis=1)


def _first_violation(stops: np.ndarray, k: int):
    gaps = np.diff(stops, axis=1)
    bad = gaps < k
    if not bad.any():
        return None
    p = int(np.argmax(bad.any(axis=1)))
    leg = int(np.argmax(bad[p]))
    return p, leg, int(gaps[p, leg])


def gains(strategy: SimpleStrategy, path, grid: Optional[TimeGrid] = None, source: str = "X") -> GainsResult:
    """Pathwise ``sum_j g_j (X_{tau_{j+1}} - X_{tau_j})``.

    Raises :class:`SpacingViolation` when a strategy with ``h > 0`` has two
    stops closer than ``ceil(h / dt)`` grid steps on some path.
    """
    ctx = path if isinstance(path, Context) else Context(path, grid)
    stops = stop_matrix(strategy, ctx)
    back = _first_violation(stops, 0)
    if back is not None:
        raise ValueError(f"stops are not monotone on path {back[0]} at leg {back[1] + 1}")
    if strategy.h > 0:
        v = _first_violation(stops, ctx.grid.steps_for(strategy.h))
        if v is not None:
            raise SpacingViolation(v[1] + 1, v[0], v[2] * ctx.grid.dt, strategy.h)
    pos = position_matrix(strategy, ctx, stops)
    x = ctx.source(source)
    xs = np.take_along_axis(x, stops, axis=1)
    per_leg = pos * np.diff(xs, axis=1)
    return GainsResult(per_leg.sum(axis=1), per_leg, stops, pos)


@dataclass(frozen=True)
class SpacingReport:
    ok: bool
    path: Optional[int] = None
    leg: Optional[int] = None


def validate_cc_spacing(strategy: SimpleStrategy, paths, grid: Optional[TimeGrid] = None, h: Optional[float] = None) -> SpacingReport:
    """Whether consecutive stops are at least ``h`` apart (grid steps, rounded up) on every path."""
    h = strategy.h if h is None else h
    if h <= 0:
        raise ValueError("spacing check needs h > 0")
    ctx = paths if isinstance(paths, Context) else Context(paths, grid)
    v = _first_violation(stop_matrix(strategy, ctx), ctx.grid.steps_for(h))
    if v is None:
        return SpacingReport(True)
    return SpacingReport(False, v[0], v[1] + 1)


# -- interval normalization -----------------------------------------------


def gated_interval(t0: StoppingRule, t1: StoppingRule, event: EventSpec, sign: float = 1.0) -> SimpleStrategy:
    """``sign * 1_A 1_(t0, t1]`` with ``A`` decided at ``event.ref``."""
    return interval(t0, t1, BinOp("*", Const(float(sign)), EventIndicator(event)))


def _split_gated(position: Expr):
    if isinstance(position, EventIndicator):
        return 1.0, position.event
    if isinstance(position, BinOp) and position.op == "*":
        for c, e in ((position.a, position.b), (position.b, position.a)):
            if isinstance(c, Const) and isinstance(e, EventIndicator) and abs(c.value) == 1.0:
                return float(c.value), e.event
    raise ValueError("expected a single leg with position +-1_A")


def normalize_to_interval(strategy: SimpleStrategy, M: float) -> SimpleStrategy:
    """Rewrite ``+-1_A 1_(t0, t1]`` as the event-free ``+-1_(t0^A, t1^A]``.

    Off ``A`` both stops move to the constant time ``M``, so the gain there is
    zero; on ``A`` nothing changes.
    """
    if len(strategy.legs) != 1:
        raise ValueError("normalization needs a single-leg strategy")
    sign, event = _split_gated(strategy.legs[0].position)
    t0, t1 = strategy.legs[0].stop, strategy.exit
    if not M > rule_bound(t1):
        raise ValueError(f"M={M} must exceed the bound {rule_bound(t1)} of the exit stop")
    return SimpleStrategy((Leg(Gated(t0, event, M), Const(sign)),), Gated(t1, event, M), strategy.h)


# -- JSON ----------------------------------------------------------------------

_NODES = {
    cls.__name__: cls
    for cls in (
        Deterministic,
        HittingLevel,
        OffsetAfter,
        Truncate,
        Gated,
        Const,
        ValueAt,
        RunningMax,
        RunningMin,
        StopTime,
        BinOp,
        Not,
        EventIndicator,
        EventSpec,
        Leg,
        SimpleStrategy,
    )
}


def to_dict(obj):
    if is_dataclass(obj) and type(obj).__name__ in _NODES:
        d = {"node": type(obj).__name__}
        for f in fields(obj):
            d[f.name] = to_dict(getattr(obj, f.name))
        return d
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def from_dict(d):
    if isinstance(d, dict):
        if "node" not in d:
            raise ValueError(f"missing node tag in {d!r}")
        cls = _NODES.get(d["node"])
        if cls is None:
            raise ValueError(f"unknown node tag {d['node']!r}")
        kwargs = {k: from_dict(v) for k, v in d.items() if k != "node"}
        if cls is SimpleStrategy:
            kwargs["legs"] = tuple(kwargs["legs"])
        return cls(**kwargs)
    if isinstance(d, list):
        return [from_dict(v) for v in d]
    if d in ("inf", "-inf"):
        return float(d)
    return d


def dumps(obj) -> str:
    return json.dumps(to_dict(obj), sort_keys=True)


def loads(text: str):
    return from_dict(json.loads(text))
