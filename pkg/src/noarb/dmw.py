"""Martingale measures and arbitrage certificates on finite scenario trees.

A one-period node admits a strictly positive martingale measure iff its price
lies strictly inside the range of its children's prices (or all children sit
at the parent price).  Otherwise going long or short one unit at that node is
an arbitrage, and holding nothing elsewhere lifts it to the whole tree.  So
the global question decomposes into independent node-local checks.

Prices that are small-denominator rationals are handled in exact ``Fraction``
arithmetic.  Otherwise floats are used with a boundary tolerance of ``1e-9``
(relative to the local price scale); a parent within tolerance of an extreme
child with no child on the other side counts as arbitrage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from ._io import rows_to_csv

Number = Union[float, Fraction]

BOUNDARY_TOL = 1e-9
MIN_Q = 1e-12
MAX_DEN = 10**6


@dataclass
class ScenarioTree:
    """Nodes in any parent-before-child order; node 0 is the root (parent -1)."""

    parent: list[int]
    prob: list[Number]
    price: list[Number]
    children: list[list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.parent)
        if not (len(self.prob) == len(self.price) == n) or n == 0:
            raise ValueError("parent, prob and price must have equal nonzero length")
        if self.parent[0] != -1 or any(p == -1 for p in self.parent[1:]):
            raise ValueError("node 0 must be the unique root")
        self.children = [[] for _ in range(n)]
        for i, p in enumerate(self.parent[1:], start=1):
            if not (0 <= p < i):
                raise ValueError(f"node {i} has parent {p}; parents must precede children")
            self.children[p].append(i)
        for i, ch in enumerate(self.children):
            if not ch:
                continue
            ps = [self.prob[c] for c in ch]
            if any(not q > 0 for q in ps):
                raise ValueError(f"children of node {i} need strictly positive probabilities")
            if abs(float(sum(ps)) - 1.0) > 1e-9:
                raise ValueError(f"children of node {i} have probabilities summing to {float(sum(ps))}")

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def internal(self) -> list[int]:
        return [i for i, ch in enumerate(self.children) if ch]

    def leaves(self) -> list[int]:
        return [i for i, ch in enumerate(self.children) if not ch]

    def level(self, i: int) -> int:
        d = 0
        while self.parent[i] != -1:
            i = self.parent[i]
            d += 1
        return d

    def ancestry(self, leaf: int) -> list[int]:
        """Nodes from the root down to ``leaf``."""
        out = [leaf]
        while self.parent[out[-1]] != -1:
            out.append(self.parent[out[-1]])
        return out[::-1]

    def map_prices(self, f) -> "ScenarioTree":
        return ScenarioTree(list(self.parent), list(self.prob), [float(f(float(x))) for x in self.price])

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": i, "parent": self.parent[i], "prob": _enc(self.prob[i]), "price": _enc(self.price[i])}
                for i in range(self.n_nodes)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioTree":
        nodes = sorted(d["nodes"], key=lambda r: r["id"])
        if [r["id"] for r in nodes] != list(range(len(nodes))):
            raise ValueError("node ids must be 0..n-1")
        return cls([r["parent"] for r in nodes], [_dec(r["prob"]) for r in nodes], [_dec(r["price"]) for r in nodes])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioTree":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return (
            isinstance(other, ScenarioTree)
            and self.parent == other.parent
            and list(map(_enc, self.prob)) == list(map(_enc, other.prob))
            and list(map(_enc, self.price)) == list(map(_enc, other.price))
        )


def _enc(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def _dec(x):
    if isinstance(x, str):
        return Fraction(x)
    return x


@dataclass
class MartingaleCertificate:
    q: dict[int, Number]  # branch weight of every non-root node
    exact: bool = False

    def to_dict(self) -> dict:
        return {"type": "martingale", "exact": self.exact, "q": {str(k): _enc(v) for k, v in sorted(self.q.items())}}


@dataclass
class ArbitrageCertificate:
    f: dict[int, Number]  # position held over each internal node's branch
    node: int = -1
    exact: bool = False

    def to_dict(self) -> dict:
        return {"type": "arbitrage", "exact": self.exact, "node": self.node,
                "f": {str(k): _enc(v) for k, v in sorted(self.f.items())}}


Certificate = Union[MartingaleCertificate, ArbitrageCertificate]


def certificate_from_dict(d: dict) -> Certificate:
    if d["type"] == "martingale":
        return MartingaleCertificate({int(k): _dec(v) for k, v in d["q"].items()}, d.get("exact", False))
    if d["type"] == "arbitrage":
        return ArbitrageCertificate({int(k): _dec(v) for k, v in d["f"].items()}, d.get("node", -1), d.get("exact", False))
    raise ValueError(f"unknown certificate type {d['type']!r}")


# -- exact / float policy --------------------------------------------------------


def _as_exact(values: Sequence) -> Optional[list[Fraction]]:
    out = []
    for v in values:
        if isinstance(v, Fraction):
            out.append(v)
        elif isinstance(v, (int, np.integer)):
            out.append(Fraction(int(v)))
        else:
            x = float(v)
            if not np.isfinite(x):
                return None
            fr = Fraction(x).limit_denominator(MAX_DEN)
            if abs(float(fr) - x) > 1e-15 * max(1.0, abs(x)):
                return None
            out.append(fr)
    return out


# -- node-local problem ------------------------------------------------------------


def _local(p, cs, exact: bool):
    """Return ('mart', weights) or ('arb', +-1) for one node."""
    k = len(cs)
    if exact:
        lo_gap = p - min(cs)
        hi_gap = max(cs) - p
        if all(c == p for c in cs):
            return "mart", [Fraction(1, k)] * k
        if lo_gap > 0 and hi_gap > 0:
            return "mart", _pair_average(p, cs, exact=True)
        return "arb", (1 if lo_gap <= 0 else -1)
    scale = max(1.0, abs(p), *(abs(c) for c in cs))
    tol = BOUNDARY_TOL * scale
    if all(abs(c - p) <= tol for c in cs):
        return "mart", [1.0 / k] * k
    if p - min(cs) > tol and max(cs) - p > tol:
        q = _pair_average(p, cs, exact=False) if k <= 2 else _maxmin_lp(p, cs)
        if min(q) >= MIN_Q:
            return "mart", q
    return "arb", (1 if p - min(cs) <= max(cs) - p else -1)


def _pair_average(p, cs, exact: bool):
    """Average of the two-point martingale measures over all (below, above) child pairs.

    Children at the parent price get a share of the mass so every weight is
    strictly positive.
    """
    k = len(cs)
    one = Fraction(1) if exact else 1.0
    below = [i for i, c in enumerate(cs) if c < p]
    above = [i for i, c in enumerate(cs) if c > p]
    equal = [i for i, c in enumerate(cs) if c == p] if exact else [i for i in range(k) if i not in below and i not in above]
    q = [0 * one] * k
    npairs = len(below) * len(above)
    for i in below:
        for j in above:
            span = cs[j] - cs[i]
            q[i] += (cs[j] - p) / span / npairs
            q[j] += (p - cs[i]) / span / npairs
    if equal:
        lam = one * len(equal) / k
        q = [(1 - lam) * w for w in q]
        for i in equal:
            q[i] += lam / len(equal)
    return q


def _maxmin_lp(p: float, cs: Sequence[float]) -> list[float]:
    """Martingale weights maximizing the smallest weight (float mode)."""
    k = len(cs)
    # variables q_1..q_k, t ; maximize t
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.zeros((2, k + 1))
    a_eq[0, :k] = 1.0
    a_eq[1, :k] = np.asarray(cs, float) - p
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=[1.0, 0.0], bounds=[(0, 1)] * k + [(0, 1)], method="highs")
    if res.status != 0:
        return _pair_average(p, cs, exact=False)
    q = np.clip(res.x[:k], 0.0, None)
    q /= q.sum()
    if q.min() < MIN_Q:
        return _pair_average(p, cs, exact=False)
    return q.tolist()


def solve_tree(tree: ScenarioTree) -> Certificate:
    """A martingale measure if one exists, else a one-node arbitrage."""
    exact_prices = _as_exact(tree.price)
    exact = exact_prices is not None
    prices = exact_prices if exact else [float(x) for x in tree.price]
    q: dict[int, Number] = {}
    for node in tree.internal():
        ch = tree.children[node]
        kind, val = _local(prices[node], [prices[c] for c in ch], exact)
        if kind == "arb":
            f = {i: (Fraction(0) if exact else 0.0) for i in tree.internal()}
            f[node] = Fraction(val) if exact else float(val)
            return ArbitrageCertificate(f, node, exact)
        for c, w in zip(ch, val):
            q[c] = w
    return MartingaleCertificate(q, exact)


# -- independent verification --------------------------------------------------------


def leaf_gains(tree: ScenarioTree, f: dict[int, Number], exact: bool = False) -> dict[int, Number]:
    prices = _as_exact(tree.price) if exact else [float(x) for x in tree.price]
    if prices is None:
        prices = [float(x) for x in tree.price]
    out = {}
    for leaf in tree.leaves():
        chain = tree.ancestry(leaf)
        g = 0
        for a, b in zip(chain[:-1], chain[1:]):
            g += f[a] * (prices[b] - prices[a])
        out[leaf] = g
    return out


def verify_certificate(tree: ScenarioTree, cert: Certificate) -> bool:
    """Re-check every certificate invariant from the tree alone."""
    exact_prices = _as_exact(tree.price)
    if isinstance(cert, MartingaleCertificate):
        expected = set(range(1, tree.n_nodes))
        if set(cert.q) != expected:
            raise ValueError("certificate does not cover exactly the non-root nodes")
        use_exact = exact_prices is not None and all(isinstance(v, Fraction) for v in cert.q.values())
        prices = exact_prices if use_exact else [float(x) for x in tree.price]
        for node in tree.internal():
            ch = tree.children[node]
            ws = [cert.q[c] if use_exact else float(cert.q[c]) for c in ch]
            if any(w <= 0 or (not use_exact and w < MIN_Q) for w in ws):
                return False
            total = sum(ws)
            mean = sum(w * prices[c] for w, c in zip(ws, ch))
            if use_exact:
                if total != 1 or mean != prices[node]:
                    return False
            else:
                scale = max(1.0, abs(prices[node]), *(abs(prices[c]) for c in ch))
                if abs(total - 1.0) > BOUNDARY_TOL or abs(mean - prices[node]) > BOUNDARY_TOL * scale:
                    return False
        return True
    if isinstance(cert, ArbitrageCertificate):
        if set(cert.f) != set(tree.internal()):
            raise ValueError("certificate does not cover exactly the internal nodes")
        use_exact = exact_prices is not None and all(isinstance(v, (Fraction, int)) for v in cert.f.values())
        g = leaf_gains(tree, cert.f, use_exact)
        vals = list(g.values())
        if use_exact:
            return all(v >= 0 for v in vals) and any(v > 0 for v in vals)
        scale = max(1.0, max(abs(float(x)) for x in tree.price))
        tol = BOUNDARY_TOL * scale
        return all(v >= -tol for v in vals) and any(v > tol for v in vals)
    raise TypeError("unknown certificate type")


# -- trees from simulated chains ------------------------------------------------------


class InsufficientPathsError(ValueError):
    pass


def build_chain_tree(chain: np.ndarray, bins: int, min_per_bin: int = 10) -> ScenarioTree:
    """Equal-frequency quantile tree from sampled values ``chain[path, step]``.

    Level ``k`` splits each node's paths by the rank of the step-``k`` value.
    A synthetic root at the sample mean is added when the first column is not
    constant.
    """
    chain = np.asarray(chain, float)
    if chain.ndim != 2 or chain.shape[1] < 1:
        raise ValueError("chain must be (paths, steps)")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    first = chain[:, 0]
    if np.all(first == first[0]):
        cols = chain[:, 1:]
        root_price = float(first[0])
    else:
        cols = chain
        root_price = float(first.mean())
    parent, prob, price = [-1], [1.0], [root_price]
    frontier = [(0, np.arange(chain.shape[0]))]
    for k in range(cols.shape[1]):
        nxt = []
        for node, rows in frontier:
            v = cols[rows, k]
            n_unique = np.unique(v).size
            b = min(bins, n_unique)
            if b > 1 and rows.size < min_per_bin * bins:
                raise InsufficientPathsError(
                    f"node {node} at level {k} has {rows.size} paths; need >= {min_per_bin * bins}. "
                    f"Increase the path count roughly {bins}x per extra level or reduce bins."
                )
            order = rows[np.argsort(v, kind="stable")]
            for part in np.array_split(order, b):
                parent.append(node)
                prob.append(part.size / rows.size)
                price.append(float(cols[part, k].mean()))
                nxt.append((len(parent) - 1, part))
        frontier = nxt
    return ScenarioTree(parent, prob, price)


def sample_chain_tree(spec, rules, grid, n_paths: int, seed: int, bins: int, h: Optional[float] = None) -> ScenarioTree:
    """Simulate ``spec``, read ``X`` at the stopping ``rules`` and quantize into a tree."""
    from .procgen import simulate
    from .strategy import Context, Leg, SimpleStrategy, validate_cc_spacing

    ctx = Context(simulate(spec, grid, n_paths, seed), grid)
    if len(rules) >= 2 and h is not None and h > 0:
        strat = SimpleStrategy(tuple(Leg(r) for r in rules[:-1]), rules[-1], h)
        rep = validate_cc_spacing(strat, ctx)
        if not rep.ok:
            raise ValueError(f"stops are not {h}-spaced (path {rep.path}, leg {rep.leg})")
    x = ctx.source("X")
    idx = np.stack([ctx.stop(r) for r in rules], axis=1)
    return build_chain_tree(np.take_along_axis(x, idx, axis=1), bins)


def residuals_csv(tree: ScenarioTree, cert: Optional[MartingaleCertificate] = None) -> str:
    """Per internal node: price, one-step mean under the tree's probabilities and under ``q``."""
    rows = []
    for node in tree.internal():
        ch = tree.children[node]
        p = float(tree.price[node])
        rp = sum(float(tree.prob[c]) * float(tree.price[c]) for c in ch) - p
        rq = sum(float(cert.q[c]) * float(tree.price[c]) for c in ch) - p if cert is not None else float("nan")
        rows.append({"node": node, "level": tree.level(node), "price": p, "resid_p": rp, "resid_q": rq})
    return rows_to_csv(rows, ["node", "level", "price", "resid_p", "resid_q"])


def random_tree(rng: np.random.Generator, max_levels: int = 3, max_children: int = 3, price_lo: int = -3, price_hi: int = 3) -> ScenarioTree:
    """Random tree with small-integer prices (for property tests and the tree experiment)."""
    parent, prob, price = [-1], [1.0], [int(rng.integers(price_lo, price_hi + 1))]
    depth = int(rng.integers(1, max_levels + 1))
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for node in frontier:
            k = int(rng.integers(1, max_children + 1))
            w = rng.integers(1, 5, size=k)
            for j in range(k):
                parent.append(node)
                prob.append(Fraction(int(w[j]), int(w.sum())))
                price.append(int(rng.integers(price_lo, price_hi + 1)))
                nxt.append(len(parent) - 1)
        frontier = nxt
    return ScenarioTree(parent, prob, price)
